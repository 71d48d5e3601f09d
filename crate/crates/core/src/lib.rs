//! No-reference video quality assessment built from two feature branches:
//! prompt-driven semantic scores gathered by sliding a vision-language
//! encoder over each frame, and low-level features from a fragment-sampling
//! spatial branch. Both are fused and regressed to a quality score that is
//! trained with a pairwise rank hinge loss plus a Pearson linearity loss.
//!
//! The numeric core (losses, metrics, layers, pooling) is generic over the
//! [`Scalar`] trait so the same code runs in `f32` for training and `f64`
//! for gradient checking. Concrete aliases for the common cases live at the
//! crate root.

pub mod config;
pub mod dataset_io;
pub mod encoder;
mod error;
pub mod eval;
pub mod fusion;
pub mod nn;
pub mod probe;
pub mod prompt_bank;
mod scalar;
pub mod sfe;
pub mod spatial;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model trained and checkpointed in single precision.
pub type Model = fusion::ClifModel<f32>;
/// Double-precision model, used for gradient checks.
pub type Model64 = fusion::ClifModel<f64>;
pub type TrainSample = fusion::TrainSample<f32>;
pub type VideoSemanticMap = sfe::VideoSemanticMap<f32>;
pub type FrameSemanticMap = sfe::FrameSemanticMap<f32>;
pub type FramePooledVector = sfe::FramePooledVector<f32>;
pub type TemporalMlp = sfe::TemporalMlp<f32>;
pub type ConvHead = spatial::ConvHead<f32>;
pub type RegressionHead = fusion::RegressionHead<f32>;
