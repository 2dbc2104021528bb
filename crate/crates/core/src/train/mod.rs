//! Optimization, the training loop, evaluation and checkpoints.

mod adam;
mod checkpoint;
mod eval;
mod schedule;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    AdamMeta, CfaPermutation, Checkpoint, NamedTensor, Progress, RngState, TensorEntry, TrainOptions, MAGIC, VERSION,
};
pub use eval::{argmax_classes, evaluate, predict_masks};
pub use schedule::{poly_lr, POLY_POWER};
pub use trainer::{epoch_checkpoint_path, LogRecord, Trainer, FINAL_CHECKPOINT};
