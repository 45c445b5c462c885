use std::fs;
use std::path::{Path, PathBuf};

use factformer_core::analysis::{
    attention_spectrum_sweep, benchmark_attention, write_bench_csv, write_spectrum_csv, BENCH_HEADER,
    SPECTRUM_HEADER,
};
use factformer_core::data::{generate_dataset, load_dataset, TrajectoryDataset};
use factformer_core::model::{load_checkpoint, save_checkpoint, FactFormer, FramePredictor, Persistence};
use factformer_core::tensor::FieldTensor;
use factformer_core::train::{
    frame_stats, rollout_errors, summarize, train as run_training, write_eval, CsvSink, FrameStat, TrainSinks,
    EVAL_HEADER, EVAL_ROWS_HEADER, TRAIN_HEADER,
};
use factformer_core::{Error, Result};

use crate::config::RunConfig;

pub const RUN_CONFIG_FILE: &str = "run_config.txt";
pub const TRAIN_METRICS_FILE: &str = "train_metrics.csv";
pub const EVAL_METRICS_FILE: &str = "eval_metrics.csv";
pub const SPECTRUM_DEFAULT_SAMPLES: usize = 100;
pub const SOFT_K90_FRACTION: f64 = 0.05;

pub struct Options {
    pub stdout: bool,
    pub threads: usize,
}

fn unwritable(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("cannot write {}: {e}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
    let probe = dir.join(".factformer-write-probe");
    fs::write(&probe, b"").map_err(|e| unwritable(dir, e))?;
    let _ = fs::remove_file(&probe);
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Opens a CSV destination, mapping failure to a configuration error so that
/// bad output paths are reported before any work starts.
fn csv_file(path: &Path, header: &str) -> Result<CsvSink> {
    ensure_dir(&parent_dir(path))?;
    CsvSink::create(path, header).map_err(|e| unwritable(path, e))
}

fn csv_out(cfg: &RunConfig, opts: &Options, header: &str) -> Result<CsvSink> {
    if opts.stdout {
        CsvSink::stdout(header)
    } else {
        csv_file(cfg.require(&cfg.output, "output")?, header)
    }
}

fn load_model(cfg: &RunConfig) -> Result<FactFormer> {
    let path = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let model = load_checkpoint(path)?;
    eprintln!(
        "loaded {}: grid {:?}, width {}, depth {}, {} mechanism, k = {}",
        path.display(),
        model.config().grid,
        model.config().width,
        model.config().depth,
        model.config().mechanism,
        model.config().march_steps
    );
    Ok(model)
}

fn load_data(cfg: &RunConfig) -> Result<TrajectoryDataset> {
    let path = cfg.require(&cfg.data, "data")?;
    let data = load_dataset(path)?;
    eprintln!(
        "loaded {} trajectories of {} frames {:?} from {}",
        data.trajectories.len(),
        data.min_frames(),
        data.frame_shape(),
        path.display()
    );
    Ok(data)
}

pub fn generate(cfg: &RunConfig, opts: &Options) -> Result<()> {
    let gen = cfg.generate_config()?;
    let out = cfg.require(&cfg.out_dir, "out_dir")?;
    for split in ["train", "test"] {
        ensure_dir(&out.join(split))?;
    }
    eprintln!(
        "generating {} train + {} test trajectories, {} frames on {}x{} with {} thread(s)",
        gen.train, gen.test, gen.frames, gen.grid, gen.grid, opts.threads
    );
    let total = gen.train + gen.test;
    let mut done = 0;
    let (train, test) = generate_dataset(&gen, out, opts.threads, &mut |split, i, path| {
        done += 1;
        eprintln!("[{done}/{total}] {split} {i}: {}", path.display());
    })?;
    eprintln!("wrote {} and {}", train.display(), test.display());
    Ok(())
}

pub fn train(mut cfg: RunConfig, opts: &Options) -> Result<()> {
    cfg.train.apply_mode(&mut cfg.model);
    cfg.model.validate()?;
    cfg.train.validate()?;
    let out = cfg.require(&cfg.out, "out")?.to_path_buf();
    let data_path = cfg.require(&cfg.data, "data")?.to_path_buf();
    let metrics = cfg.metrics_dir.clone().unwrap_or_else(|| parent_dir(&out));
    ensure_dir(&parent_dir(&out))?;
    ensure_dir(&metrics)?;

    let echo = cfg.render();
    eprint!("{echo}");
    let echo_path = metrics.join(RUN_CONFIG_FILE);
    fs::write(&echo_path, &echo).map_err(|e| unwritable(&echo_path, e))?;
    let mut train_sink = if opts.stdout {
        CsvSink::stdout(TRAIN_HEADER)?
    } else {
        csv_file(&metrics.join(TRAIN_METRICS_FILE), TRAIN_HEADER)?
    };
    let mut eval_sink = csv_file(&metrics.join(EVAL_METRICS_FILE), EVAL_ROWS_HEADER)?;

    let data = load_dataset(&data_path)?;
    let test = cfg.test_data.as_deref().map(load_dataset).transpose()?;
    let mut model = FactFormer::new(cfg.model.clone())?;
    save_checkpoint(&model, &out).map_err(|e| unwritable(&out, e))?;
    eprintln!(
        "training {} iterations in {} mode on {} trajectories",
        cfg.train.iterations,
        cfg.train.mode,
        data.trajectories.len()
    );
    let mut on_eval = |done: usize, m: &FactFormer| -> Result<()> {
        save_checkpoint(m, &out)?;
        eprintln!("iteration {done}: checkpoint written to {}", out.display());
        Ok(())
    };
    let report = run_training(
        &mut model,
        &data,
        test.as_ref(),
        &cfg.train,
        TrainSinks {
            train: &mut train_sink,
            eval: &mut eval_sink,
            on_eval: &mut on_eval,
        },
    )?;
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        eprintln!("train loss {first:.6} -> {last:.6}");
    }
    if let Some(stats) = &report.last_eval {
        let (avg, fin) = summarize(stats);
        eprintln!("held-out rollout: avg rel L2 {avg:.6}, final frame {fin:.6}");
    }
    Ok(())
}

fn eval_stats<P: FramePredictor + ?Sized>(p: &P, data: &TrajectoryDataset, cfg: &RunConfig) -> Result<Vec<FrameStat>> {
    let stats = frame_stats(&rollout_errors(p, data, cfg.horizon, cfg.samples)?);
    if let Some(bad) = stats.iter().find(|s| !s.mean.is_finite()) {
        return Err(Error::NonFinite(format!("rollout error at frame {}", bad.frame)));
    }
    Ok(stats)
}

pub fn eval(cfg: &RunConfig, opts: &Options) -> Result<()> {
    let model = load_model(cfg)?;
    let k = model.config().march_steps;
    if cfg.horizon == 0 || cfg.horizon % k != 0 {
        return Err(Error::Config(format!(
            "horizon {} must be a positive multiple of the model's {k} frames per call",
            cfg.horizon
        )));
    }
    let mut model_sink = csv_out(cfg, opts, EVAL_HEADER)?;
    let mut base_sink = if opts.stdout {
        None
    } else {
        let path = match &cfg.baseline_output {
            Some(p) => p.clone(),
            None => {
                let mut s = cfg.require(&cfg.output, "output")?.as_os_str().to_owned();
                s.push(".persistence.csv");
                PathBuf::from(s)
            }
        };
        Some(csv_file(&path, EVAL_HEADER)?)
    };
    let data = load_data(cfg)?;
    let persistence = Persistence {
        context: model.config().context,
        steps: k,
    };
    let stats = eval_stats(&model, &data, cfg)?;
    let base = eval_stats(&persistence, &data, cfg)?;
    write_eval(&mut model_sink, &stats)?;
    match &mut base_sink {
        Some(sink) => write_eval(sink, &base)?,
        None => write_eval(&mut CsvSink::stdout(&format!("# persistence baseline\n{EVAL_HEADER}"))?, &base)?,
    }
    let (avg, fin) = summarize(&stats);
    let (bavg, bfin) = summarize(&base);
    eprintln!("model:       avg rel L2 {avg:.6}, final {fin:.6}");
    eprintln!("persistence: avg rel L2 {bavg:.6}, final {bfin:.6}");
    let wins = stats.iter().zip(&base).filter(|(m, b)| m.mean < b.mean).count();
    eprintln!("model beats persistence on {wins}/{} frames", stats.len());
    Ok(())
}

pub fn benchmark(mut cfg: RunConfig, opts: &Options) -> Result<()> {
    cfg.bench.seed = cfg.model.seed;
    cfg.bench.lambda = cfg.model.lambda;
    let mut sink = csv_out(&cfg, opts, BENCH_HEADER)?;
    let rows = benchmark_attention(&cfg.bench, &mut |line| eprintln!("{line}"))?;
    write_bench_csv(&mut sink, &cfg.bench, &rows)
}

/// Input windows for the spectrum sweep: consecutive non-overlapping
/// context windows, visiting trajectories round-robin.
pub fn spectrum_contexts(data: &TrajectoryDataset, t_in: usize, samples: usize) -> Result<Vec<Vec<FieldTensor>>> {
    data.require_frames(t_in)?;
    let per_traj = data.min_frames() / t_in;
    let n = data.trajectories.len();
    let available = per_traj * n;
    if samples > available {
        eprintln!("only {available} context windows available; analyzing all of them");
    }
    Ok((0..samples.min(available))
        .map(|j| {
            let start = (j / n) * t_in;
            data.trajectories[j % n].frames[start..start + t_in].to_vec()
        })
        .collect())
}

pub fn spectrum(cfg: &RunConfig, opts: &Options) -> Result<()> {
    let mut sink = csv_out(cfg, opts, SPECTRUM_HEADER)?;
    let model = load_model(cfg)?;
    let data = load_data(cfg)?;
    let samples = if cfg.samples == 0 { SPECTRUM_DEFAULT_SAMPLES } else { cfg.samples };
    let contexts = spectrum_contexts(&data, model.config().context, samples)?;
    eprintln!("analyzing {} context windows", contexts.len());
    let spectra = attention_spectrum_sweep(&model, &contexts, cfg.full_rank)?;
    write_spectrum_csv(&mut sink, &spectra)?;
    let mut hit = false;
    for s in spectra.iter().filter(|s| s.axis.is_some() && !s.degenerate()) {
        let bound = SOFT_K90_FRACTION * s.size as f64;
        let ok = (s.k90 as f64) < bound;
        hit |= ok;
        eprintln!(
            "layer {} axis {}: k90 = {} of {} ({}), max rank {}",
            s.layer,
            s.axis.unwrap_or_default(),
            s.k90,
            s.size,
            if ok { "below 5%" } else { "not below 5%" },
            s.max_rank
        );
    }
    eprintln!(
        "soft check, some axial kernel has k90 < {SOFT_K90_FRACTION} S: {}",
        if hit { "yes" } else { "no" }
    );
    Ok(())
}
