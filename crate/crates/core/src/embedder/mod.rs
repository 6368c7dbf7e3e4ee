//! Siamese twin encoder trained with a contrastive loss.
//!
//! Both branches of the twin share one [`EncoderParams`]; a pair is embedded
//! by running the same network twice, and gradients from the two branches are
//! summed into a single update.

mod loss;
mod model_file;
mod network;
mod optim;
mod pairs;
mod train;

pub use loss::{contrastive_loss, contrastive_loss_with, loss_gradient, LossForm};
pub use model_file::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::{EncoderParams, Layer};
pub use optim::sgd_step;
pub use pairs::{mine_hard_pairs, sample_pairs, squared_distance, Label, LabeledSet, PairSample};
pub use train::{train, train_from, Mining, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::binio::DecodeError;

/// Output of the encoder for one descriptor.
pub type Embedding = Vec<f64>;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("layer {index} takes {got} inputs but the previous layer emits {expected}")]
    LayerChain {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("layer {index} has {len} weights, expected {rows}x{cols}")]
    LayerShape {
        index: usize,
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("encoder has no layers")]
    NoLayers,
    #[error("parameter structures have different shapes")]
    ShapeMismatch,
    #[error("descriptor contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("no class has two or more items, positive pairs are impossible")]
    NoPositivePairs,
    #[error("{0} descriptors but {1} labels")]
    LabelCount(usize, usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, loss: f64 },
    #[error("bad model file: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed-length, finite input vector for one object proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptor(Vec<f64>);

impl PatchDescriptor {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(pos));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for PatchDescriptor {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}
