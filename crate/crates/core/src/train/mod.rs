//! Teacher-student training harness: synthetic tasks, losses, Adam with
//! early stopping, and the block-structure sweeps.

mod adam;
mod loss;
mod sweep;
mod task;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{loss_and_grad, LossKind};
pub use sweep::{aggregate, student_spec, sweep_blocks, SweepMode, SweepOptions, SweepRow};
pub use task::{generate_task, Dataset, Sample, SyntheticTaskSpec, Target, TaskKind};
pub use trainer::{
    evaluate, summarize, train_from, train_model, EpochMetrics, RunRecord, TrainConfig,
};
