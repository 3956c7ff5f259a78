//! Quantization-aware training with a learnable symmetric quantizer.
//!
//! * [`quant`]: weight/activation quantizers, straight-through gradients, integer codes.
//! * [`mse`]: MSE-optimal unit step sizes and the statistics used to scale them.
//! * [`nn`]: a small reverse-mode layer stack with fake-quantization nodes and checkpoints.
//! * [`optim`]: SGD/Adam with parameter groups and the learning-rate schedules.
//! * [`diagnostics`]: empirical SQNR, training-dynamics records, and test oracles.

pub mod diagnostics;
pub mod error;
pub mod mse;
pub mod nn;
pub mod optim;
pub mod quant;
pub mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;

// Book chapters run as doc-tests so their listings stay compilable.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quantizers.md")]
    mod quantizers {}
    #[doc = include_str!("../../../book/src/initialization.md")]
    mod initialization {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
}
