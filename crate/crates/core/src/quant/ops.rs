use crate::error::{Error, Result};
use crate::quant::spec::{Granularity, QuantCode, QuantMode, QuantSpec, StepParam};
use crate::real::Real;
use crate::tensor::Tensor;

/// Which saturated-branch formula `grad_step_weight` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepGradForm {
    /// `sign(x) * (N - 1) / 2`, the derivative of the saturated output `±alpha`.
    #[default]
    Corrected,
    /// `sign(x) * alpha`, kept for A/B comparison. Off by a factor of `delta`.
    AlphaScaled,
}

#[inline]
fn clip_n<T: Real>(u: T, levels: u32) -> T {
    u.max(T::zero()).min(T::lit(levels as f64 - 1.0))
}

/// Pre-round argument of the weight quantizer, `(x + alpha) / delta`.
#[inline]
pub fn weight_arg<T: Real>(x: T, delta: T, levels: u32) -> T {
    let alpha = delta * T::lit((levels as f64 - 1.0) / 2.0);
    (x + alpha) / delta
}

/// Odd integer code `2 * round(clip_N((x + alpha) / delta)) - N + 1`.
#[inline]
pub fn weight_code<T: Real>(x: T, delta: T, levels: u32) -> i32 {
    let r = clip_n(weight_arg(x, delta, levels), levels).round();
    2 * r.to_i32().expect("level index fits in i32") - levels as i32 + 1
}

/// Scalar symmetric weight quantizer. Inputs are not validated.
///
/// Evaluated as `code * (delta / 2)`, which equals
/// `round(clip_N((x + alpha) / delta)) * delta - alpha` and makes decoding bit-exact.
#[inline]
pub fn weight_scalar<T: Real>(x: T, delta: T, levels: u32) -> T {
    T::lit(weight_code(x, delta, levels) as f64) * (delta / T::lit(2.0))
}

/// Scalar activation quantizer `round(clip_N(x / delta)) * delta`. Inputs are not validated.
#[inline]
pub fn activation_scalar<T: Real>(x: T, delta: T, levels: u32) -> T {
    clip_n(x / delta, levels).round() * delta
}

/// STE derivative of the weight quantizer with respect to its step size.
#[inline]
pub fn weight_step_grad_scalar<T: Real>(x: T, delta: T, levels: u32, form: StepGradForm) -> T {
    let half_span = T::lit((levels as f64 - 1.0) / 2.0);
    let u = weight_arg(x, delta, levels);
    if u > T::zero() && u < T::lit(levels as f64 - 1.0) {
        -x / delta + u.round() - half_span
    } else {
        let s = if u <= T::zero() { -T::one() } else { T::one() };
        match form {
            StepGradForm::Corrected => s * half_span,
            StepGradForm::AlphaScaled => s * half_span * delta,
        }
    }
}

/// STE derivative of the activation quantizer with respect to its step size.
#[inline]
pub fn activation_step_grad_scalar<T: Real>(x: T, delta: T, levels: u32) -> T {
    let top = T::lit(levels as f64 - 1.0);
    let u = x / delta;
    if u <= T::zero() {
        T::zero()
    } else if u < top {
        -u + u.round()
    } else {
        top
    }
}

/// STE pass-through mask: one strictly inside the clip range, zero where clipped.
#[inline]
pub fn input_mask_scalar<T: Real>(x: T, delta: T, levels: u32, mode: QuantMode) -> T {
    let u = match mode {
        QuantMode::Weight => weight_arg(x, delta, levels),
        QuantMode::Activation => x / delta,
    };
    if u > T::zero() && u < T::lit(levels as f64 - 1.0) {
        T::one()
    } else {
        T::zero()
    }
}

/// Number of consecutive elements that share one step size.
pub fn group_len<T: Real>(shape: &[usize], step: &StepParam<T>, spec: &QuantSpec) -> Result<usize> {
    let numel: usize = shape.iter().product();
    match spec.granularity {
        Granularity::PerLayer if step.groups() == 1 => Ok(numel),
        Granularity::PerKernel if step.groups() == shape[0] => Ok(numel / shape[0]),
        _ => Err(Error::InvalidParameter(format!(
            "{} step sizes do not fit a {:?} quantizer over shape {shape:?}",
            step.groups(),
            spec.granularity
        ))),
    }
}

fn check(
    x: &Tensor<impl Real>,
    step: &StepParam<impl Real>,
    spec: &QuantSpec,
    mode: Option<QuantMode>,
) -> Result<()> {
    spec.validate()?;
    if let Some(m) = mode {
        if spec.mode != m {
            return Err(Error::InvalidParameter(format!(
                "expected a {m:?} quantizer, got {:?}",
                spec.mode
            )));
        }
    }
    step.check()?;
    if x.has_nan() {
        return Err(Error::NaN("quantizer input".into()));
    }
    Ok(())
}

fn map_grouped<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
    mode: Option<QuantMode>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    check(x, step, spec, mode)?;
    let glen = group_len(x.shape(), step, spec)?;
    let data = x
        .data()
        .chunks(glen)
        .zip(&step.delta)
        .flat_map(|(chunk, &d)| chunk.iter().map(move |&v| (v, d)))
        .map(|(v, d)| f(v, d))
        .collect();
    Tensor::new(x.shape(), data)
}

/// Symmetric weight quantizer applied elementwise; outputs lie in `{-alpha, -alpha + delta, ..., alpha}`.
pub fn quantize_weight<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
) -> Result<Tensor<T>> {
    let n = spec.levels;
    map_grouped(x, step, spec, Some(QuantMode::Weight), |v, d| {
        weight_scalar(v, d, n)
    })
}

/// Activation quantizer applied elementwise; outputs lie in `{0, delta, ..., (N - 1) delta}`.
pub fn quantize_activation<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
) -> Result<Tensor<T>> {
    let n = spec.levels;
    map_grouped(x, step, spec, Some(QuantMode::Activation), |v, d| {
        activation_scalar(v, d, n)
    })
}

/// Dispatches on `spec.mode`.
pub fn quantize<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
) -> Result<Tensor<T>> {
    match spec.mode {
        QuantMode::Weight => quantize_weight(x, step, spec),
        QuantMode::Activation => quantize_activation(x, step, spec),
    }
}

/// Elementwise `dQ_w / d delta` under the straight-through estimator.
pub fn grad_step_weight<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
) -> Result<Tensor<T>> {
    grad_step_weight_with(x, step, spec, StepGradForm::Corrected)
}

pub fn grad_step_weight_with<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
    form: StepGradForm,
) -> Result<Tensor<T>> {
    let n = spec.levels;
    map_grouped(x, step, spec, Some(QuantMode::Weight), |v, d| {
        weight_step_grad_scalar(v, d, n, form)
    })
}

/// Elementwise `dQ_a / d delta` under the straight-through estimator.
pub fn grad_step_activation<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
) -> Result<Tensor<T>> {
    let n = spec.levels;
    map_grouped(x, step, spec, Some(QuantMode::Activation), |v, d| {
        activation_step_grad_scalar(v, d, n)
    })
}

/// Elementwise 0/1 input-gradient mask of either quantizer.
pub fn grad_input<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
) -> Result<Tensor<T>> {
    let (n, mode) = (spec.levels, spec.mode);
    map_grouped(x, step, spec, None, |v, d| input_mask_scalar(v, d, n, mode))
}

/// Integer codes of a weight tensor.
pub fn encode<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
) -> Result<QuantCode<T>> {
    check(x, step, spec, Some(QuantMode::Weight))?;
    let glen = group_len(x.shape(), step, spec)?;
    let codes = x
        .data()
        .chunks(glen)
        .zip(&step.delta)
        .flat_map(|(chunk, &d)| chunk.iter().map(move |&v| weight_code(v, d, spec.levels)))
        .collect();
    Ok(QuantCode {
        shape: x.shape().to_vec(),
        codes,
        delta: step.delta.clone(),
        levels: spec.levels,
    })
}

/// `code * delta / 2`; reproduces [`quantize_weight`] bit for bit.
pub fn decode<T: Real>(code: &QuantCode<T>) -> Result<Tensor<T>> {
    let glen = code.codes.len() / code.delta.len();
    let data = code
        .codes
        .chunks(glen)
        .zip(&code.delta)
        .flat_map(|(chunk, &d)| {
            chunk
                .iter()
                .map(move |&c| T::lit(c as f64) * (d / T::lit(2.0)))
        })
        .collect();
    Tensor::new(&code.shape, data)
}

/// Semi-symmetric two's-complement quantizer `w ≈ ŵ * delta`,
/// `ŵ ∈ [-2^(bits-1), 2^(bits-1) - 1]`.
pub fn quantize_fixedpoint_baseline<T: Real>(
    x: &Tensor<T>,
    delta: T,
    bits: u32,
) -> Result<Tensor<T>> {
    if !(2..=16).contains(&bits) {
        return Err(Error::InvalidParameter(format!(
            "fixed-point baseline needs 2..=16 bits, got {bits}"
        )));
    }
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive, got {delta}"
        )));
    }
    if x.has_nan() {
        return Err(Error::NaN("quantizer input".into()));
    }
    let lo = -T::lit((1u32 << (bits - 1)) as f64);
    let hi = T::lit(((1u32 << (bits - 1)) - 1) as f64);
    Ok(x.map(|v| (v / delta).round().max(lo).min(hi) * delta))
}
