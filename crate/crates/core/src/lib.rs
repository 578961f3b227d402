//! Channel-wise mixed-precision quantization search.
//!
//! The crate contains a small reverse-mode autodiff engine over `f64`
//! tensors, affine/PACT quantizers, softmax precision gates, size and energy
//! cost models, the three-phase search trainer and a lowering pass that
//! splits mixed-precision layers into single-precision sub-layers.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod autograd;
pub mod cost;
pub mod data;
pub mod error;
pub mod gates;
pub mod kernels;
pub mod lower;
pub mod model;
pub mod optim;
pub mod quant;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use cost::{CostLut, RegMode};
pub use error::{Error, Result};
pub use gates::{GateState, LayerAssignment, PrecisionAssignment, PrecisionSet};
pub use model::{Architecture, Granularity, LayerSpec, Model, SearchSpace};
pub use tensor::Tensor;
