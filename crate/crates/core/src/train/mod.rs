//! Optimization: AdamW, learning-rate and marching schedules, pushforward
//! rollouts, and the train/eval loops.

mod config;
mod eval;
mod loss;
mod metrics;
mod optim;
mod schedule;
mod trainer;

pub use config::{Mode, TrainConfig};
pub use eval::{frame_stats, rollout_errors, summarize, write_eval, FrameStat, EVAL_HEADER};
pub use loss::{advance_context, mean_frame_loss, pushforward_loss, step_loss, Surrogate};
pub use metrics::{CsvSink, SharedBuffer};
pub use optim::{clip_grad_norm, scale_grads, AdamW};
pub use schedule::{Curriculum, CyclicLr, LR_FLOOR_RATIO};
pub use trainer::{probe_loss, train, TrainReport, TrainSinks, EVAL_ROWS_HEADER, TRAIN_HEADER};
