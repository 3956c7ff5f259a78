//! Reverse-mode layer stack with fake-quantization nodes.
//!
//! Models are built from an [`ArchSpec`] and a [`PrecisionPlan`]. Every layer
//! caches what it needs in `forward` and consumes it in `backward`; parameter
//! gradients accumulate until [`Model::zero_grad`].

mod arch;
pub mod checkpoint;
mod fake_quant;
mod layers;
mod loss;
mod model;

pub use arch::{build_model, ArchSpec, LayerDesc, LayerKind, LayerRole, Precision, PrecisionPlan};
pub use fake_quant::{ActState, FakeQuantActivation, FakeQuantWeight};
pub use layers::{BatchNorm, Conv2d, Dense, Flatten, MaxPool2d, Relu};
pub use loss::{accuracy, softmax_cross_entropy};
pub use model::{Layer, Model, NamedTensor};

/// Forward-pass mode; BatchNorm uses batch statistics only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}
