//! Deterministic training and evaluation: minibatch Adam with early
//! stopping, raw-scale forecast metrics, and binary checkpoints.

mod checkpoint;
mod metrics;
mod train;

pub use checkpoint::{Checkpoint, load_checkpoint, save_checkpoint};
pub use metrics::{MetricSet, evaluate};
pub use train::{EpochRecord, TrainConfig, TrainOutcome, export_history, train};
