use super::metrics::CsvSink;
use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::model::{rollout, FramePredictor};
use crate::tensor::relative_l2;

pub const EVAL_HEADER: &str = "frame,mean_rel_l2,stddev";

/// Error statistics for one rollout step across trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStat {
    /// Steps ahead of the context, starting at 1.
    pub frame: usize,
    pub mean: f64,
    pub stddev: f64,
}

/// Rolls out from the first `context_len` frames of each trajectory (the
/// first `samples`, or all when 0) and returns `errors[trajectory][frame]`.
pub fn rollout_errors<P: FramePredictor + ?Sized>(
    model: &P,
    data: &TrajectoryDataset,
    horizon: usize,
    samples: usize,
) -> Result<Vec<Vec<f64>>> {
    let t_in = model.context_len();
    let k = model.steps_per_call();
    if horizon == 0 || horizon % k != 0 {
        return Err(Error::Config(format!(
            "horizon {horizon} must be a positive multiple of the {k} frames per call"
        )));
    }
    data.require_frames(t_in + horizon)?;
    let n = if samples == 0 { data.trajectories.len() } else { samples.min(data.trajectories.len()) };
    let mut out = Vec::with_capacity(n);
    for traj in &data.trajectories[..n] {
        let preds = rollout(model, &traj.frames[..t_in], horizon)?;
        let errs = preds
            .iter()
            .zip(&traj.frames[t_in..t_in + horizon])
            .map(|(p, r)| relative_l2(p, r))
            .collect::<Result<Vec<f64>>>()?;
        out.push(errs);
    }
    Ok(out)
}

/// Per-frame mean and population standard deviation.
pub fn frame_stats(errors: &[Vec<f64>]) -> Vec<FrameStat> {
    let Some(first) = errors.first() else {
        return Vec::new();
    };
    let n = errors.len() as f64;
    (0..first.len())
        .map(|f| {
            let mean = errors.iter().map(|e| e[f]).sum::<f64>() / n;
            let var = errors.iter().map(|e| (e[f] - mean).powi(2)).sum::<f64>() / n;
            FrameStat {
                frame: f + 1,
                mean,
                stddev: var.sqrt(),
            }
        })
        .collect()
}

/// `(average over frames, final frame)` of the mean errors.
pub fn summarize(stats: &[FrameStat]) -> (f64, f64) {
    let avg = stats.iter().map(|s| s.mean).sum::<f64>() / stats.len().max(1) as f64;
    (avg, stats.last().map_or(f64::NAN, |s| s.mean))
}

/// Writes the per-frame rows and a trailing `#` summary line. The sink
/// must already carry [`EVAL_HEADER`].
pub fn write_eval(sink: &mut CsvSink, stats: &[FrameStat]) -> Result<()> {
    for s in stats {
        sink.row(&format!("{},{},{}", s.frame, s.mean, s.stddev))?;
    }
    let (avg, last) = summarize(stats);
    sink.row(&format!("# avg_rel_l2={avg} final_rel_l2={last}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GenerateConfig, Manifest, Trajectory};
    use crate::model::Persistence;
    use crate::tensor::FieldTensor;

    struct Oracle<'a> {
        truth: &'a [FieldTensor],
        k: usize,
    }

    impl FramePredictor for Oracle<'_> {
        fn context_len(&self) -> usize {
            2
        }
        fn steps_per_call(&self) -> usize {
            self.k
        }
        fn predict(&self, context: &[FieldTensor]) -> Result<Vec<FieldTensor>> {
            let at = self.truth.iter().position(|f| f == context.last().unwrap()).unwrap();
            Ok(self.truth[at + 1..at + 1 + self.k].to_vec())
        }
    }

    fn dataset(n: usize) -> TrajectoryDataset {
        let cfg = GenerateConfig { grid: 8, frames: 10, k_max: 4, ..GenerateConfig::default() };
        let trajectories: Vec<Trajectory> = (0..n as u64)
            .map(|s| Trajectory { seed: s, frames: cfg.trajectory(s).unwrap() })
            .collect();
        TrajectoryDataset {
            manifest: Manifest { config: cfg, entries: vec![] },
            trajectories,
        }
    }

    #[test]
    fn perfect_predictor_has_zero_error() {
        let ds = dataset(1);
        let o = Oracle { truth: &ds.trajectories[0].frames, k: 2 };
        let errs = rollout_errors(&o, &ds, 2, 0).unwrap();
        assert_eq!(errs, vec![vec![0.0, 0.0]]);
        assert!(rollout_errors(&o, &ds, 3, 0).is_err());
    }

    #[test]
    fn persistence_errors_are_non_negative_and_grow() {
        let ds = dataset(3);
        let p = Persistence { context: 2, steps: 1 };
        let stats = frame_stats(&rollout_errors(&p, &ds, 6, 0).unwrap());
        assert_eq!(stats.len(), 6);
        assert!(stats.iter().all(|s| s.mean >= 0.0 && s.stddev >= 0.0));
        assert!(stats.windows(2).all(|w| w[1].mean > w[0].mean));
        let (avg, last) = summarize(&stats);
        assert!(avg < last);
    }

    #[test]
    fn stats_of_known_values() {
        let s = frame_stats(&[vec![1.0, 2.0], vec![3.0, 2.0]]);
        assert_eq!(s[0], FrameStat { frame: 1, mean: 2.0, stddev: 1.0 });
        assert_eq!(s[1], FrameStat { frame: 2, mean: 2.0, stddev: 0.0 });
    }
}
