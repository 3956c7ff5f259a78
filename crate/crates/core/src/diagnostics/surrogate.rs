//! Frozen-offset surrogate of the quantizers, the reference for STE gradients.
//!
//! At an evaluation point with pre-round argument `u0`, `round(u)` is replaced by
//! `u + c` with `c = round(u0) - u0`, and the clip branch taken at `u0` is kept
//! fixed. The surrogate equals the quantizer at that point and is smooth in `(x, delta)`,
//! so central differences of it give the gradients a straight-through estimator should
//! produce.

use crate::error::{Error, Result};
use crate::quant::{QuantMode, QuantSpec};
use crate::real::Real;

/// Distance in `u` below which the surrogate refuses to freeze a point.
pub const DEGENERATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Interior,
    ClippedLow,
    ClippedHigh,
}

fn pre_round<T: Real>(x: T, delta: T, levels: u32, mode: QuantMode) -> T {
    match mode {
        QuantMode::Weight => (x + delta * T::lit((levels as f64 - 1.0) / 2.0)) / delta,
        QuantMode::Activation => x / delta,
    }
}

/// Frozen offset and branch at `(x0, delta0)`, without degeneracy checks.
pub fn freeze<T: Real>(x0: T, delta0: T, levels: u32, mode: QuantMode) -> (T, Branch) {
    let u = pre_round(x0, delta0, levels, mode);
    let top = T::lit(levels as f64 - 1.0);
    if u <= T::zero() {
        (T::zero(), Branch::ClippedLow)
    } else if u >= top {
        (T::zero(), Branch::ClippedHigh)
    } else {
        (u.round() - u, Branch::Interior)
    }
}

/// Surrogate value with a frozen offset and branch.
pub fn frozen_value<T: Real>(
    x: T,
    delta: T,
    levels: u32,
    mode: QuantMode,
    offset: T,
    branch: Branch,
) -> T {
    let top = T::lit(levels as f64 - 1.0);
    let alpha = delta * T::lit((levels as f64 - 1.0) / 2.0);
    let shift = match mode {
        QuantMode::Weight => alpha,
        QuantMode::Activation => T::zero(),
    };
    let level = match branch {
        Branch::Interior => pre_round(x, delta, levels, mode) + offset,
        Branch::ClippedLow => T::zero(),
        Branch::ClippedHigh => top,
    };
    level * delta - shift
}

/// Scalar surrogate frozen at one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct SteSurrogate {
    mode: QuantMode,
    levels: u32,
    offset: f64,
    branch: Branch,
}

impl SteSurrogate {
    /// Freezes at `(x0, delta0)`; ties and clip boundaries are rejected.
    pub fn at(x0: f64, delta0: f64, spec: &QuantSpec) -> Result<Self> {
        spec.validate()?;
        if !(delta0 > 0.0) || x0.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "bad evaluation point ({x0}, {delta0})"
            )));
        }
        let u = pre_round(x0, delta0, spec.levels, spec.mode);
        let top = spec.levels as f64 - 1.0;
        let interior = u > 0.0 && u < top;
        let tie = ((u - u.floor()) - 0.5).abs();
        if (interior && tie < DEGENERATE_TOL) || u.abs() < DEGENERATE_TOL || (u - top).abs() < DEGENERATE_TOL {
            return Err(Error::OracleUndefined(format!(
                "u = {u} is at a rounding tie or clip boundary"
            )));
        }
        let (offset, branch) = freeze(x0, delta0, spec.levels, spec.mode);
        Ok(Self {
            mode: spec.mode,
            levels: spec.levels,
            offset,
            branch,
        })
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn value(&self, x: f64, delta: f64) -> f64 {
        frozen_value(x, delta, self.levels, self.mode, self.offset, self.branch)
    }

    /// Central difference in `delta`.
    pub fn d_delta(&self, x: f64, delta: f64, h: f64) -> f64 {
        (self.value(x, delta + h) - self.value(x, delta - h)) / (2.0 * h)
    }

    /// Central difference in `x`.
    pub fn d_x(&self, x: f64, delta: f64, h: f64) -> f64 {
        (self.value(x + h, delta) - self.value(x - h, delta)) / (2.0 * h)
    }
}
