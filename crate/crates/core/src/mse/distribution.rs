use serde::{Deserialize, Serialize};

use crate::quant::QuantMode;

/// A quantizer-input density with everything the MSE analysis needs.
pub trait Density {
    fn pdf(&self, x: f64) -> f64;
    /// Integration range; unbounded tails are truncated at 12 standard deviations.
    fn support(&self) -> (f64, f64);
    fn is_symmetric(&self) -> bool;
    /// Signal power used as the SQNR numerator, expressed relative to this density's MSE.
    fn sqnr_signal_power(&self) -> f64;
}

const TAIL: f64 = 12.0;

/// Unit distributions the step sizes are pre-computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDistribution {
    /// Standard normal; weights.
    StdGaussian,
    /// Continuous positive part of a rectified standard normal, density `2 phi(x)` on `x > 0`;
    /// post-ReLU activations.
    StdHalfGaussian,
}

impl InputDistribution {
    pub fn for_mode(mode: QuantMode) -> Self {
        match mode {
            QuantMode::Weight => Self::StdGaussian,
            QuantMode::Activation => Self::StdHalfGaussian,
        }
    }

    /// `E[X^2]`, one for both shipped distributions.
    pub fn second_moment(&self) -> f64 {
        1.0
    }
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Density for InputDistribution {
    fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::StdGaussian => std_normal_pdf(x),
            Self::StdHalfGaussian if x >= 0.0 => 2.0 * std_normal_pdf(x),
            Self::StdHalfGaussian => 0.0,
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            Self::StdGaussian => (-TAIL, TAIL),
            Self::StdHalfGaussian => (0.0, TAIL),
        }
    }

    fn is_symmetric(&self) -> bool {
        matches!(self, Self::StdGaussian)
    }

    fn sqnr_signal_power(&self) -> f64 {
        match self {
            Self::StdGaussian => 1.0,
            // The signal is the whole rectified variable R = max(0, Z), measured by its
            // variance 1/2 - 1/(2 pi). Zeros are reproduced exactly, so the noise of R is
            // half the conditional MSE. Against the conditional MSE this is 1 - 1/pi.
            Self::StdHalfGaussian => 1.0 - std::f64::consts::FRAC_1_PI,
        }
    }
}
