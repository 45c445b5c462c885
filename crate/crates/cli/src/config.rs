//! Flat `key=value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use factformer_core::analysis::BenchConfig;
use factformer_core::data::GenerateConfig;
use factformer_core::model::FactFormerConfig;
use factformer_core::train::TrainConfig;
use factformer_core::{Error, Result};

/// Keys owned by the CLI itself, with help text.
pub const RUN_KEYS: [(&str, &str); 27] = [
    ("frames", "frames per generated trajectory"),
    ("dt", "time between generated frames"),
    ("nu", "diffusivity of the toy PDE"),
    ("cx", "advection velocity along axis 0"),
    ("cy", "advection velocity along axis 1"),
    ("alpha", "spectral decay of the initial-condition field"),
    ("kmax", "wavenumber cutoff of the initial-condition field"),
    ("data_seed", "first initial-condition seed"),
    ("train_trajectories", "number of generated training trajectories"),
    ("test_trajectories", "number of generated test trajectories"),
    ("out_dir", "dataset output directory (generate)"),
    ("data", "dataset split directory or manifest (train, eval, spectrum)"),
    ("test_data", "held-out split evaluated during training"),
    ("out", "checkpoint written by train"),
    ("metrics_dir", "directory for training CSVs (default: next to the checkpoint)"),
    ("checkpoint", "checkpoint read by eval and spectrum"),
    ("horizon", "rollout frames scored by eval"),
    ("output", "CSV output path (eval, benchmark, spectrum)"),
    ("baseline_output", "persistence-baseline CSV path (eval)"),
    ("mechanisms", "comma-separated attention mechanisms to benchmark"),
    ("grids", "comma-separated axial sizes of square benchmark grids"),
    ("head_dims", "comma-separated kernel dimensions to benchmark"),
    ("bench_width", "hidden width of benchmarked blocks"),
    ("bench_heads", "head count of benchmarked blocks"),
    ("reps", "timed benchmark repetitions"),
    ("warmup", "discarded warm-up repetitions"),
    ("samples", "input windows analyzed by spectrum (also caps eval trajectories; 0 = all)"),
];

const MODEL_HELP: [&str; 14] = [
    "spatial grid, e.g. 32x32",
    "channels per frame",
    "context frames fed to the encoder",
    "hidden width d",
    "number of attention blocks",
    "attention heads",
    "kernel dimension d_k per head",
    "rotary mesh weight",
    "frames predicted per call (k)",
    "parameter initialization seed (also seeds benchmark inputs)",
    "attention mechanism: factorized or linear",
    "scale of the random Fourier positional features",
    "share one positional encoder across blocks (true/false)",
    "take the block residual before the positional term (true/false)",
];

const TRAIN_HELP: [&str; 16] = [
    "training protocol: lm or ar (ar forces march_steps=1)",
    "optimizer steps",
    "windows per optimizer step",
    "peak of the cyclic learning rate",
    "iterations per learning-rate cycle",
    "AdamW beta1",
    "AdamW beta2",
    "AdamW epsilon",
    "AdamW decoupled weight decay",
    "global gradient-norm clip (0 disables)",
    "fraction of training after which pushforward batches start",
    "ramp march steps from 1 to k over training (true/false)",
    "iterations between held-out evaluations",
    "rollout frames scored during training",
    "held-out trajectories scored during training (0 = all)",
    "window sampling seed",
];

pub const FULL_RANK_KEY: (&str, &str) = ("full_rank", "singular values kept for full-kernel spectra");

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: FactFormerConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub out_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub horizon: usize,
    pub output: Option<PathBuf>,
    pub baseline_output: Option<PathBuf>,
    pub bench: BenchConfig,
    pub samples: usize,
    pub full_rank: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: FactFormerConfig::default(),
            train: TrainConfig::default(),
            generate: GenerateConfig::default(),
            out_dir: None,
            data: None,
            test_data: None,
            out: None,
            metrics_dir: None,
            checkpoint: None,
            horizon: 16,
            output: None,
            baseline_output: None,
            bench: BenchConfig::default(),
            samples: 0,
            full_rank: 64,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|v| parse(key, v)).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every accepted key with its help text, in a fixed order.
    pub fn keys() -> Vec<(&'static str, &'static str)> {
        let mut keys: Vec<(&str, &str)> = FactFormerConfig::KEYS.into_iter().zip(MODEL_HELP).collect();
        keys.extend(TrainConfig::KEYS.into_iter().zip(TRAIN_HELP));
        keys.extend(RUN_KEYS);
        keys.push(FULL_RANK_KEY);
        keys
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if FactFormerConfig::KEYS.contains(&key) {
            return self.model.set(key, value);
        }
        if TrainConfig::KEYS.contains(&key) {
            return self.train.set(key, value);
        }
        let path = || Some(PathBuf::from(value.trim()));
        let g = &mut self.generate;
        match key {
            "frames" => g.frames = parse(key, value)?,
            "dt" => g.dt = parse(key, value)?,
            "nu" => g.nu = parse(key, value)?,
            "cx" => g.c[0] = parse(key, value)?,
            "cy" => g.c[1] = parse(key, value)?,
            "alpha" => g.alpha = parse(key, value)?,
            "kmax" => g.k_max = parse(key, value)?,
            "data_seed" => g.seed = parse(key, value)?,
            "train_trajectories" => g.train = parse(key, value)?,
            "test_trajectories" => g.test = parse(key, value)?,
            "out_dir" => self.out_dir = path(),
            "data" => self.data = path(),
            "test_data" => self.test_data = path(),
            "out" => self.out = path(),
            "metrics_dir" => self.metrics_dir = path(),
            "checkpoint" => self.checkpoint = path(),
            "horizon" => self.horizon = parse(key, value)?,
            "output" => self.output = path(),
            "baseline_output" => self.baseline_output = path(),
            "mechanisms" => self.bench.mechanisms = parse_list(key, value)?,
            "grids" => self.bench.grids = parse_list(key, value)?,
            "head_dims" => self.bench.head_dims = parse_list(key, value)?,
            "bench_width" => self.bench.width = parse(key, value)?,
            "bench_heads" => self.bench.heads = parse(key, value)?,
            "reps" => self.bench.reps = parse(key, value)?,
            "warmup" => self.bench.warmup = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "full_rank" => self.full_rank = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value, got {line:?}", source.display(), no + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", source.display(), no + 1)))?;
        }
        Ok(())
    }

    /// Every key with its current value, as `key=value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.to_pairs().into_iter().chain(self.train.to_pairs()) {
            let _ = writeln!(out, "{k}={v}");
        }
        let p = |x: &Option<PathBuf>| x.as_ref().map_or(String::new(), |p| p.display().to_string());
        let g = &self.generate;
        let b = &self.bench;
        let own: Vec<(&str, String)> = vec![
            ("frames", g.frames.to_string()),
            ("dt", g.dt.to_string()),
            ("nu", g.nu.to_string()),
            ("cx", g.c[0].to_string()),
            ("cy", g.c[1].to_string()),
            ("alpha", g.alpha.to_string()),
            ("kmax", g.k_max.to_string()),
            ("data_seed", g.seed.to_string()),
            ("train_trajectories", g.train.to_string()),
            ("test_trajectories", g.test.to_string()),
            ("out_dir", p(&self.out_dir)),
            ("data", p(&self.data)),
            ("test_data", p(&self.test_data)),
            ("out", p(&self.out)),
            ("metrics_dir", p(&self.metrics_dir)),
            ("checkpoint", p(&self.checkpoint)),
            ("horizon", self.horizon.to_string()),
            ("output", p(&self.output)),
            ("baseline_output", p(&self.baseline_output)),
            ("mechanisms", join(&b.mechanisms)),
            ("grids", join(&b.grids)),
            ("head_dims", join(&b.head_dims)),
            ("bench_width", b.width.to_string()),
            ("bench_heads", b.heads.to_string()),
            ("reps", b.reps.to_string()),
            ("warmup", b.warmup.to_string()),
            ("samples", self.samples.to_string()),
            ("full_rank", self.full_rank.to_string()),
        ];
        for (k, v) in own {
            if !v.is_empty() {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }

    /// Dataset generation settings; the grid comes from the model `grid` key.
    pub fn generate_config(&self) -> Result<GenerateConfig> {
        let g = &self.model.grid;
        if g.len() != 2 || g[0] != g[1] {
            return Err(Error::Config(format!("the toy dataset needs a square 2-D grid, got {g:?}")));
        }
        let cfg = GenerateConfig { grid: g[0], ..self.generate.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing required setting {key} (config key or --{key})")))
    }
}
