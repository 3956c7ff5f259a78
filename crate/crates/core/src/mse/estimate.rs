use log::warn;

use super::analytic::unit_step;
use crate::error::{Error, Result};
use crate::quant::{levels_for_bits, Granularity, QuantMode, STEP_EPS};
use crate::real::Real;
use crate::tensor::{mean_std, Tensor};

/// Per-group input scale with any degenerate-group warnings raised while estimating it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEstimate {
    pub scales: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Population standard deviation of a weight tensor, per layer or per output channel.
///
/// Zero-variance groups fall back to [`STEP_EPS`] and are reported in `warnings`.
pub fn estimate_weight_scale<T: Real>(
    w: &Tensor<T>,
    granularity: Granularity,
) -> Result<ScaleEstimate> {
    if w.is_empty() {
        return Err(Error::InvalidInput(
            "cannot estimate the scale of an empty tensor".into(),
        ));
    }
    let glen = match granularity {
        Granularity::PerLayer => w.len(),
        Granularity::PerKernel => w.len() / w.dim0(),
    };
    if glen < 2 {
        return Err(Error::InvalidInput(format!(
            "scale groups need at least 2 elements, got {glen}"
        )));
    }
    let mut est = ScaleEstimate {
        scales: Vec::new(),
        warnings: Vec::new(),
    };
    for (g, chunk) in w.data().chunks(glen).enumerate() {
        let (_, std) = mean_std(chunk);
        if std > 0.0 && std.is_finite() {
            est.scales.push(std);
        } else {
            let msg = format!("group {g} has zero variance; using fallback scale {STEP_EPS:e}");
            warn!("{msg}");
            est.warnings.push(msg);
            est.scales.push(STEP_EPS);
        }
    }
    Ok(est)
}

/// Running estimate of `max_k sqrt(2 mean(x^2))` over calibration batches of post-ReLU inputs.
#[derive(Debug, Clone, Default)]
pub struct ActivationScaleEstimator {
    batches: usize,
    max_scale: f64,
    sum_mean: f64,
}

impl ActivationScaleEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe<T: Real>(&mut self, batch: &[T]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let energy = batch.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / n;
        self.max_scale = self.max_scale.max((2.0 * energy).sqrt());
        self.sum_mean += batch.iter().map(|v| v.as_f64()).sum::<f64>() / n;
        self.batches += 1;
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    /// Mean of the per-batch input means, used by the LSQ heuristic.
    pub fn mean_input(&self) -> f64 {
        if self.batches == 0 {
            0.0
        } else {
            self.sum_mean / self.batches as f64
        }
    }

    pub fn finish(&self) -> Result<ScaleEstimate> {
        if self.batches == 0 {
            return Err(Error::InvalidInput(
                "no calibration batches observed".into(),
            ));
        }
        if self.max_scale > 0.0 && self.max_scale.is_finite() {
            return Ok(ScaleEstimate {
                scales: vec![self.max_scale],
                warnings: Vec::new(),
            });
        }
        let msg =
            format!("all calibration activations are zero; using fallback scale {STEP_EPS:e}");
        warn!("{msg}");
        Ok(ScaleEstimate {
            scales: vec![STEP_EPS],
            warnings: vec![msg],
        })
    }
}

/// Activation scale from the first `k` batches of a stream.
pub fn estimate_activation_scale<'a, T: Real>(
    batches: impl IntoIterator<Item = &'a [T]>,
    k: usize,
) -> Result<ScaleEstimate> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "at least one calibration batch is required".into(),
        ));
    }
    let mut est = ActivationScaleEstimator::new();
    batches.into_iter().take(k).for_each(|b| est.observe(b));
    est.finish()
}

/// MSE-optimal step size for an input of the given scale: `delta_unit(mode, N) * scale`.
pub fn init_step(mode: QuantMode, levels: u32, scale: f64) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidInput(format!(
            "scale must be positive, got {scale}"
        )));
    }
    Ok(unit_step(mode, levels)? * scale)
}

/// LSQ's largest positive integer level for a bit-width.
pub fn lsq_positive_levels(bits: u32, mode: QuantMode) -> Result<u32> {
    levels_for_bits(bits)?;
    Ok(match mode {
        QuantMode::Activation => (1 << bits) - 1,
        QuantMode::Weight => (1 << (bits - 1)) - 1,
    })
}

/// LSQ heuristic `2 mean(|x|) / sqrt(Q_P)`.
pub fn lsq_heuristic_init<T: Real>(samples: &[T], bits: u32, mode: QuantMode) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput(
            "LSQ initialization needs samples".into(),
        ));
    }
    let mean_abs = samples.iter().map(|v| v.as_f64().abs()).sum::<f64>() / samples.len() as f64;
    lsq_init_from_mean_abs(mean_abs, bits, mode)
}

/// LSQ heuristic from an already measured `mean(|x|)`.
pub fn lsq_init_from_mean_abs(mean_abs: f64, bits: u32, mode: QuantMode) -> Result<f64> {
    let qp = lsq_positive_levels(bits, mode)?;
    if qp == 0 {
        return Err(Error::UnsupportedByBaseline(format!(
            "LSQ initialization has no positive levels for {bits}-bit {mode:?}"
        )));
    }
    Ok((2.0 * mean_abs / (qp as f64).sqrt()).max(STEP_EPS))
}
