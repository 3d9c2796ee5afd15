//! The assembled network, its joint objective and training.

mod checkpoint;
mod config;
pub mod loss;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry};
pub use config::ModelConfig;
pub use loss::{loss_align, loss_au, loss_joint, LossParts, LossVars, PROB_EPS};
pub use net::{ForwardVars, Network, Prediction, ReasoningLayer};
pub use train::{
    batch_gradients, evaluate, sample_gradients, sample_loss, EpochLog, Optimizer, TrainConfig, Trainer,
};

use crate::numerics::Tensor;

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// `[channels, size, size]`.
    pub image: Tensor,
    /// `(x, y)` pixel coordinates.
    pub landmarks: Vec<(f64, f64)>,
    pub labels: Vec<u8>,
    /// Inter-ocular distance in pixels.
    pub inter_ocular: f64,
}
