use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use factformer_core::data::{read_field_file, MANIFEST_FILE};
use factformer_core::model::{encode_checkpoint, FactFormer, FactFormerConfig};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_factformer");
const SUBCOMMANDS: [&str; 5] = ["generate", "train", "eval", "benchmark", "spectrum"];
const SMALL_MODEL: [&str; 10] = ["--grid", "8x8", "--width", "8", "--heads", "2", "--head_dim", "4", "--depth", "1"];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("FACT_THREADS").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "generate",
        "--out-dir",
        p(dir),
        "--grid",
        "8x8",
        "--kmax",
        "3",
        "--frames",
        "14",
        "--train_trajectories",
        "3",
        "--test_trajectories",
        "2",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn small_dataset() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let out = generate(&tmp.path().join("data"), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    tmp
}

fn train_small(tmp: &Path, name: &str, extra: &[&str]) -> Output {
    let data = tmp.join("data/train");
    let test = tmp.join("data/test");
    let ck = tmp.join(name).join("ck.bin");
    let mut args = vec![
        "train",
        "--data",
        p(&data),
        "--test_data",
        p(&test),
        "--out",
        p(&ck),
        "--iterations",
        "12",
        "--batch_size",
        "2",
        "--eval_every",
        "6",
        "--eval_horizon",
        "8",
    ];
    args.extend_from_slice(&SMALL_MODEL);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn help_lists_every_key_for_every_subcommand() {
    let keys = [
        "grid", "in_channels", "context", "width", "depth", "heads", "head_dim", "lambda", "march_steps", "seed",
        "mechanism", "rff_sigma", "shared_pos_encoding", "skip_before_pos", "mode", "iterations", "batch_size",
        "max_lr", "lr_period", "beta1", "beta2", "adam_eps", "weight_decay", "clip_norm", "pushforward_start",
        "curriculum", "eval_every", "eval_horizon", "eval_samples", "train_seed", "frames", "dt", "nu", "cx", "cy",
        "alpha", "kmax", "data_seed", "train_trajectories", "test_trajectories", "out_dir", "data", "test_data",
        "out", "metrics_dir", "checkpoint", "horizon", "output", "baseline_output", "mechanisms", "grids",
        "head_dims", "bench_width", "bench_heads", "reps", "warmup", "samples", "full_rank",
    ];
    for sub in SUBCOMMANDS {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0);
        let help = stdout(&out);
        for key in keys {
            assert!(help.contains(&format!("--{key} ")), "{sub} --help misses --{key}");
        }
        for flag in ["--config", "--stdout", "--threads"] {
            assert!(help.contains(flag), "{sub} --help misses {flag}");
        }
    }
}

#[test]
fn usage_errors_exit_with_code_2() {
    assert_eq!(code(&run(&["generate", "--no-such-flag", "1"])), 2);
    assert_eq!(code(&run(&["bogus"])), 2);
    let tmp = TempDir::new().unwrap();
    let out = generate(&tmp.path().join("d"), &["--threads", "0"]);
    assert_eq!(code(&out), 2);
    let out = Command::new(BIN)
        .args(["generate", "--out-dir", p(&tmp.path().join("d"))])
        .env("FACT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("FACT_THREADS"));
}

#[test]
fn config_file_keys_apply_and_flags_override_them() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# toy run\ngrid = 8x8\nkmax=3\nframes = 3 # short\ntrain_trajectories=2\ntest_trajectories=1\n").unwrap();
    let dir = tmp.path().join("d");
    let out = run(&["generate", "--config", p(&cfg), "--out-dir", p(&dir), "--frames", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest = fs::read_to_string(dir.join("train").join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("frames=2"), "{manifest}");
    assert!(manifest.contains("grid=8"), "{manifest}");

    fs::write(&cfg, "grid=8x8\nbogus_key=1\n").unwrap();
    let out = run(&["generate", "--config", p(&cfg), "--out-dir", p(&dir)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bogus_key"));
    let out = run(&["generate", "--config", p(&tmp.path().join("missing.cfg")), "--out-dir", p(&dir)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn generate_single_frame_files() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("d");
    let out = generate(&dir, &["--frames", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let frames = read_field_file(&dir.join("train/traj_0000.ffld")).unwrap().into_frames();
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].shape(), &[8, 8, 1]);
    assert_eq!(stderr(&out).lines().filter(|l| l.contains(".ffld")).count(), 5);
}

#[test]
fn generate_is_deterministic_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&generate(&a, &["--threads", "1"])), 0);
    assert_eq!(code(&generate(&b, &["--threads", "3"])), 0);
    for split in ["train", "test"] {
        let mut names: Vec<_> = fs::read_dir(a.join(split)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.iter().any(|n| n == MANIFEST_FILE));
        for n in names {
            assert_eq!(fs::read(a.join(split).join(&n)).unwrap(), fs::read(b.join(split).join(&n)).unwrap());
        }
    }
}

#[test]
fn generate_creates_missing_dirs_and_rejects_unwritable_ones() {
    let tmp = TempDir::new().unwrap();
    let nested = tmp.path().join("x/y/z");
    assert_eq!(code(&generate(&nested, &[])), 0);
    assert!(nested.join("test").join(MANIFEST_FILE).is_file());

    let file = tmp.path().join("plain_file");
    fs::write(&file, b"not a directory").unwrap();
    let out = generate(&file.join("sub"), &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("cannot write"), "{}", stderr(&out));
}

#[test]
fn generate_rejects_non_square_grids() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["generate", "--out-dir", p(tmp.path()), "--grid", "8x16"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn zero_iterations_write_the_initial_model() {
    let tmp = small_dataset();
    let out = train_small(tmp.path(), "m", &["--iterations", "0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut cfg = FactFormerConfig { grid: vec![8, 8], width: 8, heads: 2, head_dim: 4, depth: 1, ..Default::default() };
    cfg.seed = 0;
    let init = encode_checkpoint(&FactFormer::new(cfg).unwrap());
    assert_eq!(fs::read(tmp.path().join("m/ck.bin")).unwrap(), init);
    let metrics = fs::read_to_string(tmp.path().join("m/train_metrics.csv")).unwrap();
    assert_eq!(metrics, "iter,lr,train_loss\n");
}

#[test]
fn training_writes_metrics_and_is_reproducible() {
    let tmp = small_dataset();
    for name in ["a", "b"] {
        let out = train_small(tmp.path(), name, &[]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for file in ["train_metrics.csv", "eval_metrics.csv", "ck.bin", "run_config.txt"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        if file == "run_config.txt" {
            let strip = |s: Vec<u8>| String::from_utf8(s).unwrap().lines().filter(|l| !l.starts_with("out=")).collect::<Vec<_>>().join("\n");
            assert_eq!(strip(a), strip(b));
        } else {
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }
    let train = fs::read_to_string(tmp.path().join("a/train_metrics.csv")).unwrap();
    assert!(train.starts_with("iter,lr,train_loss\n"));
    assert_eq!(train.lines().count(), 13);
    let eval = fs::read_to_string(tmp.path().join("a/eval_metrics.csv")).unwrap();
    assert!(eval.starts_with("iter,frame,rel_l2\n"));
    assert_eq!(eval.lines().count(), 1 + 2 * 8);
    for row in eval.lines().skip(1) {
        let v: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }
}

#[test]
fn training_metrics_can_go_to_stdout_and_a_separate_dir() {
    let tmp = small_dataset();
    let metrics = tmp.path().join("metrics");
    let out = train_small(tmp.path(), "m", &["--stdout", "--metrics-dir", p(&metrics), "--iterations", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("iter,lr,train_loss\n"));
    assert_eq!(text.lines().count(), 4);
    assert!(metrics.join("eval_metrics.csv").is_file());
    assert!(!metrics.join("train_metrics.csv").exists());
}

#[test]
fn ar_mode_forces_single_step_marching() {
    let tmp = small_dataset();
    let out = train_small(tmp.path(), "m", &["--mode", "ar", "--iterations", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).lines().any(|l| l == "march_steps=1"));
    assert!(stderr(&out).lines().any(|l| l == "mode=ar"));
    let echo = fs::read_to_string(tmp.path().join("m/run_config.txt")).unwrap();
    assert!(echo.lines().any(|l| l == "march_steps=1"));
}

#[test]
fn divergence_exits_with_code_3() {
    let tmp = small_dataset();
    let out = train_small(tmp.path(), "m", &["--max_lr", "1e300", "--clip_norm", "0"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn training_path_and_data_errors() {
    let tmp = small_dataset();
    let file = tmp.path().join("plain_file");
    fs::write(&file, b"x").unwrap();
    let out = run(&["train", "--data", p(&tmp.path().join("data/train")), "--out", p(&file.join("ck.bin"))]);
    assert_eq!(code(&out), 2);
    let out = run(&["train", "--data", p(&tmp.path().join("nowhere")), "--out", p(&tmp.path().join("m/ck.bin"))]);
    assert_eq!(code(&out), 4);
    let out = run(&["train", "--out", p(&tmp.path().join("m/ck.bin"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("data"));
    // Model grid does not match the 8x8 dataset.
    let out = run(&["train", "--data", p(&tmp.path().join("data/train")), "--out", p(&tmp.path().join("m/ck.bin"))]);
    assert_eq!(code(&out), 2);
}

fn trained(tmp: &Path) -> String {
    let out = train_small(tmp, "m", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    p(&tmp.join("m/ck.bin")).to_string()
}

#[test]
fn eval_writes_model_and_persistence_tables() {
    let tmp = small_dataset();
    let ck = trained(tmp.path());
    let test = tmp.path().join("data/test");
    let output = tmp.path().join("e/eval.csv");
    let out = run(&["eval", "--checkpoint", &ck, "--data", p(&test), "--horizon", "8", "--output", p(&output)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let base = tmp.path().join("e/eval.csv.persistence.csv");
    for path in [&output, &base] {
        let text = fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "frame,mean_rel_l2,stddev");
        assert_eq!(lines.len(), 10);
        for (i, row) in lines[1..9].iter().enumerate() {
            let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols[0] as usize, i + 1);
            assert!(cols[1] >= 0.0 && cols[2] >= 0.0);
        }
        assert!(lines[9].starts_with("# avg_rel_l2="));
    }
    assert!(stderr(&out).contains("persistence"));

    let custom = tmp.path().join("e/base.csv");
    let out = run(&[
        "eval", "--checkpoint", &ck, "--data", p(&test), "--horizon", "4", "--stdout", "--baseline_output", p(&custom),
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.matches("frame,mean_rel_l2,stddev").count(), 2);
    assert!(text.contains("# persistence baseline"));
}

#[test]
fn eval_is_deterministic() {
    let tmp = small_dataset();
    let ck = trained(tmp.path());
    let test = tmp.path().join("data/test");
    let args = ["eval", "--checkpoint", &ck, "--data", p(&test), "--horizon", "8", "--stdout"];
    assert_eq!(run(&args).stdout, run(&args).stdout);
}

#[test]
fn eval_errors_map_to_exit_codes() {
    let tmp = small_dataset();
    let ck = trained(tmp.path());
    let test = tmp.path().join("data/test");
    let out = run(&["eval", "--checkpoint", &ck, "--data", p(&test), "--horizon", "6", "--stdout"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("horizon"));

    let out = run(&["eval", "--checkpoint", p(&tmp.path().join("none.bin")), "--data", p(&test), "--stdout"]);
    assert_eq!(code(&out), 4);

    let bad = tmp.path().join("bad.bin");
    fs::write(&bad, b"FFCKPT01 but truncated").unwrap();
    let out = run(&["eval", "--checkpoint", p(&bad), "--data", p(&test), "--stdout"]);
    assert_eq!(code(&out), 4);

    let out = run(&["eval", "--checkpoint", &ck, "--data", p(&test)]);
    assert_eq!(code(&out), 2, "missing output path");
}

#[test]
fn benchmark_single_grid_gives_one_row_per_mechanism() {
    let out = run(&["benchmark", "--grids", "64", "--head_dims", "64", "--reps", "1", "--stdout"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "mechanism,grid,d_k,enc_time,fwd_bwd_time,peak_bytes,mul_add_count");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("factorized,64x64,64,"));
    assert!(rows[2].starts_with("linear,64x64,64,"));
    for row in &rows[1..] {
        let peak: usize = row.split(',').nth(5).unwrap().parse().unwrap();
        assert!(peak > 0, "allocation tracking is active in the binary");
    }
}

#[test]
fn benchmark_rejects_too_few_warmups() {
    let out = run(&["benchmark", "--grids", "8", "--warmup", "1", "--stdout"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn spectrum_csv_schema() {
    let tmp = small_dataset();
    let ck = trained(tmp.path());
    let output = tmp.path().join("s/spec.csv");
    let out = run(&[
        "spectrum", "--checkpoint", &ck, "--data", p(&tmp.path().join("data/test")), "--samples", "3", "--output",
        p(&output),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&output).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("layer,axis,k,b_k,k90"));
    let rows: Vec<Vec<&str>> = lines.filter(|l| !l.starts_with('#')).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 8);
    for group in rows.chunks(8) {
        let b: Vec<f64> = group.iter().map(|r| r[3].parse().unwrap()).collect();
        assert!(b.windows(2).all(|w| w[1] >= w[0]));
        assert!((b[7] - 1.0).abs() < 1e-12);
    }
    assert!(stderr(&out).contains("soft check"));
}
