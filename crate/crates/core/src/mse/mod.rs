//! MSE-optimal step sizes.
//!
//! For each level count the step size minimizing `E[(x - Q(x))^2]` under a unit-scale input
//! distribution is found once by bisection on the MSE derivative and then rescaled by
//! measured input statistics: the standard deviation for weights, `sqrt(2 E[x^2])` for
//! post-ReLU activations.

mod analytic;
mod distribution;
mod estimate;
pub mod quadrature;

pub use analytic::{
    activation_mse, activation_mse_derivative, mse_derivative, quantizer_mse, solve_unit_step,
    sqnr_db, unit_step, weight_mse, weight_mse_derivative, UnitStepEntry, UnitStepTable, BRACKET,
    QUAD_TOL, SOLVE_TOL,
};
pub use distribution::{Density, InputDistribution};
pub use estimate::{
    estimate_activation_scale, estimate_weight_scale, init_step, lsq_heuristic_init,
    lsq_init_from_mean_abs, lsq_positive_levels, ActivationScaleEstimator, ScaleEstimate,
};
