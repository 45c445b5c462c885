use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, TrainConfig};
use super::eval::{frame_stats, rollout_errors, FrameStat};
use super::loss::{pushforward_loss, step_loss};
use super::metrics::CsvSink;
use super::optim::{clip_grad_norm, AdamW};
use super::schedule::{Curriculum, CyclicLr};
use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::model::FactFormer;
use crate::nn::Module;

pub const TRAIN_HEADER: &str = "iter,lr,train_loss";
pub const EVAL_ROWS_HEADER: &str = "iter,frame,rel_l2";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per iteration.
    pub losses: Vec<f64>,
    pub last_eval: Option<Vec<FrameStat>>,
}

/// Where training output goes. `on_eval` runs at every evaluation point
/// with the number of completed iterations, e.g. to save a checkpoint.
pub struct TrainSinks<'a> {
    pub train: &'a mut CsvSink,
    pub eval: &'a mut CsvSink,
    pub on_eval: &'a mut dyn FnMut(usize, &FactFormer) -> Result<()>,
}

fn sample_window<'d>(
    data: &'d TrajectoryDataset,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> &'d [crate::tensor::FieldTensor] {
    let traj = &data.trajectories[rng.random_range(0..data.trajectories.len())];
    let start = rng.random_range(0..=traj.frames.len() - len);
    &traj.frames[start..start + len]
}

/// Runs the optimization loop. Batch items are processed in order and
/// their gradients accumulate before one optimizer step per iteration.
pub fn train(
    model: &mut FactFormer,
    data: &TrajectoryDataset,
    eval: Option<&TrajectoryDataset>,
    cfg: &TrainConfig,
    sinks: TrainSinks<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let k = model.config().march_steps;
    let t_in = model.config().context;
    if cfg.mode == Mode::Ar && k != 1 {
        return Err(Error::Config(format!("AR mode needs march_steps = 1, model has {k}")));
    }
    if data.trajectories.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if data.frame_shape() != model.config().frame_shape().as_slice() {
        return Err(Error::Config(format!(
            "dataset frames {:?} do not match model frames {:?}",
            data.frame_shape(),
            model.config().frame_shape()
        )));
    }
    data.require_frames(t_in + 2 * k)?;
    if let Some(e) = eval {
        if cfg.eval_horizon == 0 || cfg.eval_horizon % k != 0 {
            return Err(Error::Config(format!(
                "eval_horizon {} must be a positive multiple of march_steps {k}",
                cfg.eval_horizon
            )));
        }
        e.require_frames(t_in + cfg.eval_horizon)?;
    }

    let lr = CyclicLr::new(cfg.max_lr, cfg.lr_period, cfg.iterations)?;
    let ramp = cfg.curriculum && cfg.mode == Mode::Lm;
    let curriculum = Curriculum::new(k, cfg.iterations, cfg.pushforward_start, ramp)?;
    let mut opt = AdamW::new(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    let weight = 1.0 / cfg.batch_size as f64;
    model.zero_grad();

    let mut report = TrainReport {
        losses: Vec::with_capacity(cfg.iterations),
        last_eval: None,
    };
    for iter in 0..cfg.iterations {
        let (steps, _) = curriculum.at(iter);
        let push = match cfg.mode {
            Mode::Lm => curriculum.use_pushforward(iter),
            Mode::Ar => true,
        };
        let len = t_in + if push { 2 * steps } else { steps };
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let window = sample_window(data, len, &mut rng);
            let l = if push {
                pushforward_loss(model, window, steps, weight)?
            } else {
                step_loss(model, window, steps, weight)?
            };
            loss += weight * l;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iter,
                detail: format!("training loss is {loss}"),
            });
        }
        if cfg.clip_norm > 0.0 {
            clip_grad_norm(model, cfg.clip_norm);
        }
        let rate = lr.at(iter);
        opt.step(model, rate).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { iter, detail },
            other => other,
        })?;
        sinks.train.row(&format!("{iter},{rate},{loss}"))?;
        report.losses.push(loss);

        let done = iter + 1;
        let due = (cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == cfg.iterations;
        if due {
            if let Some(e) = eval {
                let stats = frame_stats(&rollout_errors(&*model, e, cfg.eval_horizon, cfg.eval_samples)?);
                for s in &stats {
                    sinks.eval.row(&format!("{done},{},{}", s.frame, s.mean))?;
                }
                if let Some(bad) = stats.iter().find(|s| !s.mean.is_finite()) {
                    return Err(Error::Divergence {
                        iter,
                        detail: format!("evaluation error at frame {} is {}", bad.frame, bad.mean),
                    });
                }
                report.last_eval = Some(stats);
            }
            (sinks.on_eval)(done, model)?;
        }
    }
    Ok(report)
}

/// Mean per-step loss with all `k` steps over the first `windows` windows
/// starting at frame 0 of each trajectory. Leaves gradients untouched.
pub fn probe_loss(model: &FactFormer, data: &TrajectoryDataset, windows: usize) -> Result<f64> {
    let t_in = model.config().context;
    let k = model.config().march_steps;
    let n = windows.min(data.trajectories.len()).max(1);
    let mut total = 0.0;
    for traj in &data.trajectories[..n] {
        let preds = model.predict(&traj.frames[..t_in])?;
        total += super::loss::mean_frame_loss(&preds, &traj.frames[t_in..t_in + k])?.0;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GenerateConfig, Manifest, Trajectory};
    use crate::model::FactFormerConfig;
    use crate::train::SharedBuffer;
    use std::path::Path;

    fn dataset(n: usize, seed0: u64) -> TrajectoryDataset {
        let cfg = GenerateConfig { grid: 8, frames: 14, k_max: 3, ..GenerateConfig::default() };
        let trajectories = (0..n as u64)
            .map(|s| Trajectory { seed: seed0 + s, frames: cfg.trajectory(seed0 + s).unwrap() })
            .collect();
        TrajectoryDataset {
            manifest: Manifest { config: cfg, entries: vec![] },
            trajectories,
        }
    }

    fn model() -> FactFormer {
        FactFormer::new(FactFormerConfig {
            grid: vec![8, 8],
            context: 2,
            width: 16,
            depth: 1,
            heads: 2,
            head_dim: 8,
            march_steps: 2,
            seed: 11,
            ..FactFormerConfig::default()
        })
        .unwrap()
    }

    fn cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 2,
            max_lr: 3e-3,
            lr_period: iterations.max(1),
            eval_every: 25,
            eval_horizon: 4,
            eval_samples: 2,
            ..TrainConfig::default()
        }
    }

    fn run(m: &mut FactFormer, c: &TrainConfig, data: &TrajectoryDataset, test: &TrajectoryDataset) -> (Result<TrainReport>, String, String, usize) {
        let tb = SharedBuffer::default();
        let eb = SharedBuffer::default();
        let mut ts = CsvSink::new(Box::new(tb.clone()), Path::new("train.csv"), TRAIN_HEADER).unwrap();
        let mut es = CsvSink::new(Box::new(eb.clone()), Path::new("eval.csv"), EVAL_ROWS_HEADER).unwrap();
        let mut calls = 0;
        let r = train(m, data, Some(test), c, TrainSinks { train: &mut ts, eval: &mut es, on_eval: &mut |_, _| { calls += 1; Ok(()) } });
        (r, tb.contents(), eb.contents(), calls)
    }

    #[test]
    fn zero_iterations_change_nothing() {
        let (data, test) = (dataset(2, 0), dataset(1, 100));
        let mut m = model();
        let before = m.clone();
        let (r, t, e, calls) = run(&mut m, &cfg(0), &data, &test);
        assert!(r.unwrap().losses.is_empty());
        assert_eq!(m, before);
        assert_eq!(t, format!("{TRAIN_HEADER}\n"));
        assert_eq!(e, format!("{EVAL_ROWS_HEADER}\n"));
        assert_eq!(calls, 0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_bit_identical() {
        let (data, test) = (dataset(2, 0), dataset(1, 100));
        let mut m = model();
        let before = m.flat_values();
        let c = TrainConfig { max_lr: 0.0, ..cfg(6) };
        run(&mut m, &c, &data, &test).0.unwrap();
        let after = m.flat_values();
        assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn smoke_run_reduces_loss_and_is_reproducible() {
        let (data, test) = (dataset(8, 0), dataset(2, 100));
        let mut a = model();
        let initial = probe_loss(&a, &data, 8).unwrap();
        let (r, ta, ea, calls) = run(&mut a, &cfg(50), &data, &test);
        let report = r.unwrap();
        assert_eq!(report.losses.len(), 50);
        assert_eq!(calls, 2);
        assert!(report.last_eval.unwrap().iter().all(|s| s.mean.is_finite()));
        let fin = probe_loss(&a, &data, 8).unwrap();
        assert!(fin < initial, "probe loss {initial} -> {fin}");
        assert_eq!(ta.lines().count(), 51);
        assert_eq!(ea.lines().count(), 1 + 2 * 4);

        let mut b = model();
        let (_, tb, eb, _) = run(&mut b, &cfg(50), &data, &test);
        assert_eq!(ta, tb);
        assert_eq!(ea, eb);
        assert_eq!(a, b);
    }

    #[test]
    fn ar_mode_requires_single_step_model() {
        let (data, test) = (dataset(2, 0), dataset(1, 100));
        let c = TrainConfig { mode: Mode::Ar, ..cfg(2) };
        assert!(matches!(run(&mut model(), &c, &data, &test).0, Err(Error::Config(_))));
        let mut mc = model().config().clone();
        c.apply_mode(&mut mc);
        let mut m = FactFormer::new(mc).unwrap();
        run(&mut m, &c, &data, &test).0.unwrap();
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let (data, test) = (dataset(2, 0), dataset(1, 100));
        let mut m = model();
        m.visit_mut(&mut |p| {
            if p.name().starts_with("decoder") {
                p.value.fill(f64::MAX);
            }
        });
        let err = run(&mut m, &cfg(3), &data, &test).0.unwrap_err();
        assert!(matches!(err, Error::Divergence { iter: 0, .. }), "{err}");
    }
}
