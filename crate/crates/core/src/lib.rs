//! ShuffleMixer: a lightweight single-image super-resolution network built
//! from large-kernel depth-wise convolutions and split/shuffle channel
//! projections, together with its training loop, evaluation metrics and an
//! exact parameter / multiply-accumulate auditor.

pub mod complexity;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use model::{forward, Fusion, ModelConfig, Variant};
pub use params::ParamTree;
pub use tensor::{BinaryOp, Real, Shape, Tensor4};
