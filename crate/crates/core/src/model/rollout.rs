use std::cell::Cell;

use super::factformer::FactFormer;
use crate::error::{Error, Result};
use crate::tensor::FieldTensor;

/// Anything that maps a window of context frames to a block of future frames.
pub trait FramePredictor {
    fn context_len(&self) -> usize;
    fn steps_per_call(&self) -> usize;
    fn predict(&self, context: &[FieldTensor]) -> Result<Vec<FieldTensor>>;
}

impl FramePredictor for FactFormer {
    fn context_len(&self) -> usize {
        self.config().context
    }

    fn steps_per_call(&self) -> usize {
        self.config().march_steps
    }

    fn predict(&self, context: &[FieldTensor]) -> Result<Vec<FieldTensor>> {
        FactFormer::predict(self, context)
    }
}

/// Repeats the last context frame.
#[derive(Debug, Clone, Copy)]
pub struct Persistence {
    pub context: usize,
    pub steps: usize,
}

impl FramePredictor for Persistence {
    fn context_len(&self) -> usize {
        self.context
    }

    fn steps_per_call(&self) -> usize {
        self.steps
    }

    fn predict(&self, context: &[FieldTensor]) -> Result<Vec<FieldTensor>> {
        let last = context
            .last()
            .ok_or_else(|| Error::contract("persistence needs at least one context frame"))?;
        Ok(vec![last.clone(); self.steps])
    }
}

/// Wraps a predictor and counts its calls.
pub struct CallCounter<'a, P: FramePredictor> {
    inner: &'a P,
    calls: Cell<usize>,
}

impl<'a, P: FramePredictor> CallCounter<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        CallCounter {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<P: FramePredictor> FramePredictor for CallCounter<'_, P> {
    fn context_len(&self) -> usize {
        self.inner.context_len()
    }

    fn steps_per_call(&self) -> usize {
        self.inner.steps_per_call()
    }

    fn predict(&self, context: &[FieldTensor]) -> Result<Vec<FieldTensor>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(context)
    }
}

/// Autoregressive rollout: predicts `horizon` frames after `frames`, feeding
/// predictions back through a sliding window of the last `context_len` frames.
pub fn rollout<P: FramePredictor + ?Sized>(model: &P, frames: &[FieldTensor], horizon: usize) -> Result<Vec<FieldTensor>> {
    let k = model.steps_per_call();
    let t_in = model.context_len();
    if k == 0 || horizon % k != 0 {
        return Err(Error::contract(format!(
            "horizon {horizon} is not a multiple of the {k} steps per call"
        )));
    }
    if frames.len() < t_in {
        return Err(Error::contract(format!(
            "rollout needs {t_in} context frames, got {}",
            frames.len()
        )));
    }
    let mut window: Vec<FieldTensor> = frames[frames.len() - t_in..].to_vec();
    let mut out = Vec::with_capacity(horizon);
    while out.len() < horizon {
        let pred = model.predict(&window)?;
        if pred.len() != k {
            return Err(Error::contract(format!("predictor returned {} frames, expected {k}", pred.len())));
        }
        window.extend(pred.iter().cloned());
        window.drain(..window.len() - t_in);
        out.extend(pred);
    }
    Ok(out)
}
