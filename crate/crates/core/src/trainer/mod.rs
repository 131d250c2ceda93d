//! Desk-scale GAN training on synthetic 2-D data, with memorization
//! rejection applied to generator updates.

pub mod adam;
pub mod checkpoint;
pub mod dataset;
pub mod loss;
pub mod mlp;
pub mod rejection;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{make_dataset, DatasetKind, ToyDataset};
pub use loss::{gan_losses, GanLosses};
pub use mlp::Mlp;
pub use rejection::{rejection_sample, Generator, IdentityGenerator, RejectedBatch};
pub use train::{
    evaluate, log_csv, sample_generator, train, EvalReport, Evaluator, LogEntry, TrainerConfig, TrainerState,
};
