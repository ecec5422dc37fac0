//! Small CPU convolutional network: frozen pretrained extractor, trainable
//! convolutional autoencoder block and dense classifier.

use thiserror::Error;

pub mod layers;
pub mod model;
pub mod ops;
pub mod optim;
pub mod spec;
pub mod tensor;
pub mod train;

pub use layers::{Buffer, Layer, Param};
pub use model::{build_model, Model};
pub use optim::{Adam, AdamConfig, ParamGroup};
pub use spec::{Extractor, LayerKind, LayerSpec, ModelSpec};
pub use tensor::{Scalar, Tensor4};
pub use train::{evaluate, train_epoch, EpochMetrics};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch of {batch} is too small for batch norm statistics")]
    BatchTooSmall { batch: usize },
    #[error("missing pretrained weight {0:?}")]
    MissingWeight(String),
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error("invalid model: {0}")]
    InvalidSpec(String),
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
}
