use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{parse_value, FactFormerConfig};

/// Training protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Latent marching: `k` frames per call, per-step batches interleaved with pushforward batches.
    Lm,
    /// One frame per call, every batch a two-call pushforward rollout.
    Ar,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Lm => "lm",
            Mode::Ar => "ar",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lm" => Ok(Mode::Lm),
            "ar" => Ok(Mode::Ar),
            other => Err(Error::Config(format!("unknown training mode {other:?}; expected lm or ar"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub iterations: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub lr_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub pushforward_start: f64,
    /// Ramp the active march steps from 1 to `k`.
    pub curriculum: bool,
    /// Evaluate every this many iterations (0: only at the end).
    pub eval_every: usize,
    pub eval_horizon: usize,
    pub eval_samples: usize,
    pub train_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Lm,
            iterations: 10_000,
            batch_size: 4,
            max_lr: 3e-4,
            lr_period: 10_000,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            pushforward_start: 0.06,
            curriculum: true,
            eval_every: 1000,
            eval_horizon: 16,
            eval_samples: 20,
            train_seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 16] = [
        "mode",
        "iterations",
        "batch_size",
        "max_lr",
        "lr_period",
        "beta1",
        "beta2",
        "adam_eps",
        "weight_decay",
        "clip_norm",
        "pushforward_start",
        "curriculum",
        "eval_every",
        "eval_horizon",
        "eval_samples",
        "train_seed",
    ];

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return fail(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(0.0..=1.0).contains(&self.pushforward_start) {
            return fail(format!("pushforward_start must lie in [0, 1], got {}", self.pushforward_start));
        }
        if self.batch_size == 0 || self.lr_period == 0 {
            return fail("batch_size and lr_period must be positive".into());
        }
        if !(self.max_lr >= 0.0 && self.max_lr.is_finite()) {
            return fail(format!("max_lr must be non-negative, got {}", self.max_lr));
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return fail("adam_eps must be positive, weight_decay and clip_norm non-negative".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.trim().parse()?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_lr" => self.max_lr = parse_value(key, value)?,
            "lr_period" => self.lr_period = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "pushforward_start" => self.pushforward_start = parse_value(key, value)?,
            "curriculum" => self.curriculum = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "eval_horizon" => self.eval_horizon = parse_value(key, value)?,
            "eval_samples" => self.eval_samples = parse_value(key, value)?,
            "train_seed" => self.train_seed = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let values = [
            self.mode.to_string(),
            self.iterations.to_string(),
            self.batch_size.to_string(),
            self.max_lr.to_string(),
            self.lr_period.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.adam_eps.to_string(),
            self.weight_decay.to_string(),
            self.clip_norm.to_string(),
            self.pushforward_start.to_string(),
            self.curriculum.to_string(),
            self.eval_every.to_string(),
            self.eval_horizon.to_string(),
            self.eval_samples.to_string(),
            self.train_seed.to_string(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    /// Applies the mode to the model config: AR predicts one frame per call.
    pub fn apply_mode(&self, model: &mut FactFormerConfig) {
        if self.mode == Mode::Ar {
            model.march_steps = 1;
        }
    }
}
