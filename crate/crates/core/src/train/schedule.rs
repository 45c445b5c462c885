use crate::error::{Error, Result};

/// Triangular cyclic learning rate between `max_lr / 25` and `max_lr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclicLr {
    pub max_lr: f64,
    pub period: usize,
    /// Total iterations; after the last full cycle the rate stays at the floor.
    pub total: usize,
}

pub const LR_FLOOR_RATIO: f64 = 25.0;

impl CyclicLr {
    pub fn new(max_lr: f64, period: usize, total: usize) -> Result<Self> {
        if !(max_lr >= 0.0 && max_lr.is_finite()) || period == 0 {
            return Err(Error::Config(format!(
                "need max_lr >= 0 and a positive period, got {max_lr} and {period}"
            )));
        }
        Ok(CyclicLr { max_lr, period, total })
    }

    pub fn min_lr(&self) -> f64 {
        self.max_lr / LR_FLOOR_RATIO
    }

    pub fn at(&self, iter: usize) -> f64 {
        let cycles = (self.total / self.period).max(1);
        let lo = self.min_lr();
        if iter >= cycles * self.period {
            return lo;
        }
        let pos = (iter % self.period) as f64 / self.period as f64;
        let frac = 1.0 - (2.0 * pos - 1.0).abs();
        lo + (self.max_lr - lo) * frac
    }
}

/// Latent-marching curriculum: the number of active march steps grows from
/// 1 to `k` in equal iteration segments, and pushforward batches switch on
/// after `pushforward_start * total` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curriculum {
    pub k: usize,
    pub total: usize,
    pub pushforward_start: f64,
    /// When false every iteration uses all `k` steps.
    pub ramp: bool,
}

impl Curriculum {
    pub fn new(k: usize, total: usize, pushforward_start: f64, ramp: bool) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("march steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&pushforward_start) {
            return Err(Error::Config(format!(
                "pushforward start fraction must lie in [0, 1], got {pushforward_start}"
            )));
        }
        Ok(Curriculum {
            k,
            total,
            pushforward_start,
            ramp,
        })
    }

    /// `(active march steps, pushforward enabled)` at `iter`.
    pub fn at(&self, iter: usize) -> (usize, bool) {
        let steps = if !self.ramp || self.total == 0 {
            self.k
        } else {
            self.k.min(1 + iter * self.k / self.total)
        };
        let enabled = iter as f64 >= self.pushforward_start * self.total as f64;
        (steps, enabled)
    }

    /// Pushforward batches alternate with per-step batches once enabled.
    pub fn use_pushforward(&self, iter: usize) -> bool {
        self.at(iter).1 && iter % 2 == 1
    }
}
