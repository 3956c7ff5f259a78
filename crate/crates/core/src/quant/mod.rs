//! Uniform quantizers with a learnable step size and their straight-through gradients.
//!
//! The weight quantizer is symmetric about zero and has no zero level for even `N`:
//! with `delta = 1`, `N = 4` its levels are `-1.5, -0.5, 0.5, 1.5`. The activation
//! quantizer is unsigned and always reproduces zero. Rounding is half away from zero.

mod ops;
mod spec;

pub use ops::{
    activation_scalar, activation_step_grad_scalar, decode, encode, grad_input,
    grad_step_activation, grad_step_weight, grad_step_weight_with, group_len, input_mask_scalar,
    quantize, quantize_activation, quantize_fixedpoint_baseline, quantize_weight, weight_arg,
    weight_code, weight_scalar, weight_step_grad_scalar, StepGradForm,
};
pub use spec::{
    levels_for_bits, Granularity, QuantCode, QuantMode, QuantSpec, StepParam, TieRule, STEP_EPS,
};
