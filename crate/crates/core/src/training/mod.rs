//! Losses, initialization, the optimizer, and the training loop.

pub mod adam;
pub mod config;
pub mod init;
pub mod loss;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{Precision, TrainConfig};
pub use init::{bilinear_weights, init_bilinear, init_weights, CONV_INIT_STD};
pub use loss::{
    balanced_targets, class_balance_beta, deep_supervised_loss, deep_supervised_loss_on_tape, weighted_bce,
    weighted_bce_on_tape, LossWeights, BCE_EPS,
};
pub use train::{stack_images, train_to_dir, LossRecord, TrainOutcome, TrainSample, Trainer};
