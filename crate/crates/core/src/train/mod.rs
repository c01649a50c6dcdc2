//! Training and evaluation: Adam, the plateau scheduler, the epoch loop
//! and checkpoints.

mod checkpoint;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, Record, Role, FORMAT_VERSION, MAGIC};
pub use optim::{
    adam_update, Adam, AdamConfig, Moments, PlateauConfig, PlateauScheduler, ThresholdMode,
};
pub use trainer::{EpochMetrics, Evaluation, TrainConfig, Trainer};
