//! Kolmogorov-Arnold network layers and the KAN-Mixer image classifier,
//! built from scratch: tensors, B-spline bases, KANLinear layers with
//! analytic backprop, the mixer architecture, dataset loaders, and a
//! deterministic training loop.
//!
//! Everything computes in f64 on the CPU. Checkpoints store parameters as
//! little-endian f32 (see [`checkpoint`]). Given a seed, training is
//! bit-reproducible: batch order, initialization, and the parallel gradient
//! reduction are all fixed.

pub mod bspline;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod kan_linear;
pub mod mixer;
pub mod oracle;
pub mod tensor;
pub mod training;

pub use bspline::SplineGrid;
pub use error::{KanError, Result};
pub use kan_linear::{silu, silu_derivative, KanLinearLayer};
pub use mixer::{image_to_patches, patches_to_image, KanMixerModel, LayerNorm, MixerConfig};
pub use tensor::Tensor;
pub use training::{evaluate, softmax_cross_entropy, train, AdamParams, AdamState, RunMetrics, TrainOptions};
