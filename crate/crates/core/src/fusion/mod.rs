//! Feature fusion, the regression head, the training losses, AdamW training
//! and checkpoints.

mod checkpoint;
mod loss;
mod model;
mod optim;
mod train;

pub use checkpoint::{
    load_checkpoint, model_digest, read_checkpoint_manifest, save_checkpoint, CheckpointManifest, TensorEntry,
    CHECKPOINT_FORMAT,
};
pub use loss::{loss_lin, loss_lin_grad, loss_mon, loss_mon_grad, total_loss, total_loss_grad, LossParts};
pub use model::{
    fuse, ClifModel, ForwardTrace, ModelGrads, RegressionHead, RegressionTrace, SpatialBranch, TrainSample,
    BACKBONE_PREFIX,
};
pub use optim::AdamW;
pub use train::{calibrate, fit, log_to_csv, predict_all, EpochLog};
