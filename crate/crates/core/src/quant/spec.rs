use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Lower bound applied to every step size after an optimizer update.
pub const STEP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    /// Symmetric quantizer whose levels exclude zero.
    Weight,
    /// Unsigned quantizer for post-ReLU inputs; zero is always a level.
    Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerLayer,
    /// One step size per output channel (leading tensor dimension).
    PerKernel,
}

/// Rounding convention of the quantizers. Only one is offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// `2.5 -> 3`, `-2.5 -> -3`, same as `f64::round`.
    #[default]
    HalfAwayFromZero,
}

/// Static description of a uniform quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub mode: QuantMode,
    /// Number of reconstruction levels `N`.
    pub levels: u32,
    pub granularity: Granularity,
    #[serde(default)]
    pub tie_rule: TieRule,
}

impl QuantSpec {
    pub fn new(mode: QuantMode, levels: u32, granularity: Granularity) -> Result<Self> {
        let spec = Self {
            mode,
            levels,
            granularity,
            tie_rule: TieRule::HalfAwayFromZero,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Weight quantizer with `N = 2^bits` levels.
    pub fn weight(bits: u32, granularity: Granularity) -> Result<Self> {
        Self::new(QuantMode::Weight, levels_for_bits(bits)?, granularity)
    }

    /// Per-layer activation quantizer with `N = 2^bits` levels.
    pub fn activation(bits: u32) -> Result<Self> {
        Self::new(
            QuantMode::Activation,
            levels_for_bits(bits)?,
            Granularity::PerLayer,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 || self.levels % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "level count must be even and >= 2, got {}",
                self.levels
            )));
        }
        if self.granularity == Granularity::PerKernel && self.mode == QuantMode::Activation {
            return Err(Error::InvalidParameter(
                "per-kernel granularity is only valid for weight quantizers".into(),
            ));
        }
        Ok(())
    }

    /// `(N - 1) / 2`, the saturation level in units of the step size.
    pub fn half_span(&self) -> f64 {
        (self.levels as f64 - 1.0) / 2.0
    }
}

pub fn levels_for_bits(bits: u32) -> Result<u32> {
    if !(1..=16).contains(&bits) {
        return Err(Error::InvalidParameter(format!(
            "unsupported bit-width {bits}"
        )));
    }
    Ok(1 << bits)
}

/// Learnable step sizes of one quantizer: one per group, with accumulated gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct StepParam<T> {
    pub delta: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> StepParam<T> {
    pub fn new(delta: Vec<T>) -> Result<Self> {
        if delta.is_empty() {
            return Err(Error::InvalidParameter(
                "step parameter needs at least one group".into(),
            ));
        }
        let step = Self {
            grad: vec![T::zero(); delta.len()],
            delta,
        };
        step.check()?;
        Ok(step)
    }

    pub fn scalar(delta: T) -> Result<Self> {
        Self::new(vec![delta])
    }

    pub fn groups(&self) -> usize {
        self.delta.len()
    }

    /// Clipping threshold `alpha = delta * (N - 1) / 2` of group `g`.
    pub fn alpha(&self, group: usize, spec: &QuantSpec) -> T {
        self.delta[group] * T::lit(spec.half_span())
    }

    pub fn check(&self) -> Result<()> {
        match self
            .delta
            .iter()
            .position(|d| !(*d > T::zero()) || !d.is_finite())
        {
            Some(i) => Err(Error::InvalidParameter(format!(
                "step size of group {i} must be positive and finite, got {}",
                self.delta[i]
            ))),
            None => Ok(()),
        }
    }

    /// Enforces `delta >= STEP_EPS`.
    pub fn clamp(&mut self) {
        let eps = T::lit(STEP_EPS);
        for d in &mut self.delta {
            if !(*d >= eps) {
                *d = eps;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Integer codes of a weight tensor: odd values in `[-(N-1), N-1]`, decoded as `code * delta / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantCode<T> {
    pub shape: Vec<usize>,
    pub codes: Vec<i32>,
    /// Step size per group (one entry when per-layer).
    pub delta: Vec<T>,
    pub levels: u32,
}

impl<T: Real> QuantCode<T> {
    /// Bits needed per code, `ceil(log2 N)`.
    pub fn bits_per_code(&self) -> u32 {
        32 - (self.levels - 1).leading_zeros()
    }
}
