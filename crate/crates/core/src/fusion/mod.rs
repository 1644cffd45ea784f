//! Two-branch model, its classifier head, training loop and checkpoints.

mod checkpoint;
mod model;
mod scheme;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_with_meta, read_checkpoint, read_checkpoint_with_meta, save_checkpoint,
    save_checkpoint_with_meta, write_checkpoint, write_checkpoint_with_meta};
pub use model::{
    argmax, fuse, loss, predict_logits, regularization, FusionModel, Mode, ModelConfig, Prediction,
    PreparedInput, Regularization,
};
pub use scheme::{ClassScheme, WoundClass};
pub use train::{
    evaluate, prepare_samples, train, EpochRecord, Evaluation, Example, History, Sample, TrainConfig,
};
