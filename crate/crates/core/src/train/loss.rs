use crate::error::{Error, Result};
use crate::model::{FactFormer, ModelCache};
use crate::nn::Module;
use crate::tensor::{relative_l2_with_grad, FieldTensor};

/// A differentiable next-frames predictor.
pub trait Surrogate: Module {
    type Cache;

    fn context_len(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn forward_steps(&self, context: &[FieldTensor], steps: usize) -> Result<(Vec<FieldTensor>, Self::Cache)>;
    fn backward(&mut self, cache: &Self::Cache, grads: &[FieldTensor]) -> Result<()>;
}

impl Surrogate for FactFormer {
    type Cache = ModelCache;

    fn context_len(&self) -> usize {
        self.config().context
    }

    fn max_steps(&self) -> usize {
        self.config().march_steps
    }

    fn forward_steps(&self, context: &[FieldTensor], steps: usize) -> Result<(Vec<FieldTensor>, ModelCache)> {
        FactFormer::forward_steps(self, context, steps)
    }

    fn backward(&mut self, cache: &ModelCache, grads: &[FieldTensor]) -> Result<()> {
        FactFormer::backward(self, cache, grads)
    }
}

/// Mean relative L2 over frames and the gradient for each prediction.
pub fn mean_frame_loss(preds: &[FieldTensor], targets: &[FieldTensor]) -> Result<(f64, Vec<FieldTensor>)> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::contract(format!(
            "{} predictions against {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let w = 1.0 / preds.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        let (v, g) = relative_l2_with_grad(p, t, true)?;
        total += v;
        grads.push(g.unwrap().scaled(w));
    }
    Ok((total * w, grads))
}

fn check_window(window: &[FieldTensor], needed: usize, what: &str) -> Result<()> {
    if window.len() < needed {
        return Err(Error::contract(format!(
            "{what} needs a window of {needed} frames, got {}",
            window.len()
        )));
    }
    Ok(())
}

/// Per-step loss on `window = context ++ targets`: one call predicting
/// `steps` frames. Accumulates parameter gradients scaled by `weight`.
pub fn step_loss<M: Surrogate>(model: &mut M, window: &[FieldTensor], steps: usize, weight: f64) -> Result<f64> {
    let t_in = model.context_len();
    check_window(window, t_in + steps, "per-step loss")?;
    let (preds, cache) = model.forward_steps(&window[..t_in], steps)?;
    let (loss, mut grads) = mean_frame_loss(&preds, &window[t_in..t_in + steps])?;
    grads.iter_mut().for_each(|g| *g = g.scaled(weight));
    model.backward(&cache, &grads)?;
    Ok(loss)
}

/// Sliding context after appending `preds`: the last `t_in` frames.
pub fn advance_context(context: &[FieldTensor], preds: &[FieldTensor], t_in: usize) -> Vec<FieldTensor> {
    let mut all: Vec<FieldTensor> = context.iter().chain(preds).cloned().collect();
    all.drain(..all.len() - t_in);
    all
}

/// Two-call rollout on `window` (`T_in + 2 * steps` frames). The first
/// call runs without a cache and its predictions enter the second call as
/// plain data, so gradients only reach the parameters through the second call.
pub fn pushforward_loss<M: Surrogate>(model: &mut M, window: &[FieldTensor], steps: usize, weight: f64) -> Result<f64> {
    let t_in = model.context_len();
    check_window(window, t_in + 2 * steps, "pushforward loss")?;
    let (first, _) = model.forward_steps(&window[..t_in], steps)?;
    let context = advance_context(&window[..t_in], &first, t_in);
    let (preds, cache) = model.forward_steps(&context, steps)?;
    let targets = &window[t_in + steps..t_in + 2 * steps];
    let (loss, mut grads) = mean_frame_loss(&preds, targets)?;
    grads.iter_mut().for_each(|g| *g = g.scaled(weight));
    model.backward(&cache, &grads)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FactFormerConfig;
    use crate::nn::Param;
    use crate::tensor::relative_l2;
    use crate::testing::random_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Repeat;

    impl Module for Repeat {
        fn visit(&self, _: &mut dyn FnMut(&Param)) {}
        fn visit_mut(&mut self, _: &mut dyn FnMut(&mut Param)) {}
    }

    impl Surrogate for Repeat {
        type Cache = ();
        fn context_len(&self) -> usize {
            1
        }
        fn max_steps(&self) -> usize {
            1
        }
        fn forward_steps(&self, c: &[FieldTensor], _: usize) -> Result<(Vec<FieldTensor>, ())> {
            Ok((vec![c[0].clone()], ()))
        }
        fn backward(&mut self, _: &(), _: &[FieldTensor]) -> Result<()> {
            Ok(())
        }
    }

    fn small_model(k: usize, t_in: usize) -> FactFormer {
        let cfg = FactFormerConfig {
            grid: vec![4, 4],
            in_channels: 1,
            context: t_in,
            width: 8,
            depth: 1,
            heads: 2,
            head_dim: 4,
            march_steps: k,
            seed: 3,
            ..FactFormerConfig::default()
        };
        FactFormer::new(cfg).unwrap()
    }

    #[test]
    fn identity_model_loss_is_frame_pair_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: Vec<_> = (0..3).map(|_| random_field(&[4, 4, 1], &mut rng)).collect();
        let loss = pushforward_loss(&mut Repeat, &w, 1, 1.0).unwrap();
        assert_eq!(loss, relative_l2(&w[0], &w[2]).unwrap());
    }

    #[test]
    fn short_window_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = small_model(2, 2);
        let w: Vec<_> = (0..5).map(|_| random_field(&[4, 4, 1], &mut rng)).collect();
        assert!(pushforward_loss(&mut m, &w, 2, 1.0).is_err());
        assert!(step_loss(&mut m, &w[..3], 2, 1.0).is_err());
    }

    #[test]
    fn pushforward_matches_freeze_and_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (k, t_in, steps) in [(2, 2, 2), (3, 2, 1), (1, 3, 1), (3, 1, 3)] {
            let base = small_model(k, t_in);
            let window: Vec<_> = (0..t_in + 2 * steps).map(|_| random_field(&[4, 4, 1], &mut rng)).collect();

            let mut a = base.clone();
            let loss_a = pushforward_loss(&mut a, &window, steps, 1.0).unwrap();

            // Oracle: run the first call separately, rebuild the context by
            // hand as fixed data, then differentiate a plain per-step loss.
            let mut b = base.clone();
            let frozen = b.predict(&window[..t_in]).unwrap();
            let mut ctx2: Vec<FieldTensor> = window[..t_in].to_vec();
            ctx2.extend(frozen[..steps].iter().cloned());
            let ctx2 = ctx2[ctx2.len() - t_in..].to_vec();
            let mut w2 = ctx2;
            w2.extend(window[t_in + steps..].iter().cloned());
            let loss_b = step_loss(&mut b, &w2, steps, 1.0).unwrap();

            assert!((loss_a - loss_b).abs() <= 1e-12);
            let (ga, gb) = (a.flat_grads(), b.flat_grads());
            let worst = ga.iter().zip(&gb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-12, "k={k} t_in={t_in}: {worst:e}");
            assert!(ga.iter().any(|&g| g != 0.0));
        }
    }

    #[test]
    fn losses_are_finite_and_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = small_model(2, 2);
        for _ in 0..5 {
            let w: Vec<_> = (0..6).map(|_| random_field(&[4, 4, 1], &mut rng)).collect();
            let l = pushforward_loss(&mut m, &w, 2, 1.0).unwrap();
            assert!(l.is_finite() && l >= 0.0);
            let l = step_loss(&mut m, &w, 2, 1.0).unwrap();
            assert!(l.is_finite() && l >= 0.0);
        }
    }

    #[test]
    fn weight_scales_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w: Vec<_> = (0..4).map(|_| random_field(&[4, 4, 1], &mut rng)).collect();
        let mut a = small_model(2, 2);
        let mut b = a.clone();
        step_loss(&mut a, &w, 2, 1.0).unwrap();
        step_loss(&mut b, &w, 2, 0.5).unwrap();
        for (x, y) in a.flat_grads().iter().zip(b.flat_grads()) {
            assert!((0.5 * x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }
}
