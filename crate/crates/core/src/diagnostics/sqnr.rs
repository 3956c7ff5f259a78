use crate::error::Result;
use crate::quant::{quantize, QuantSpec, StepParam};
use crate::real::Real;
use crate::tensor::Tensor;

/// Measured SQNR in dB: `10 log10(Var(x) / mean((x - Q(x))^2))` over all elements.
///
/// For post-ReLU inputs the zeros count toward the signal variance and contribute no
/// noise, which matches the unit-distribution analysis. Returns `+inf` for zero noise and
/// `NaN` (undefined) for zero signal energy.
pub fn empirical_sqnr<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
) -> Result<f64> {
    let q = quantize(x, step, spec)?;
    Ok(sqnr_from_pairs(x.data(), q.data()))
}

pub(crate) fn sqnr_from_pairs<T: Real>(x: &[T], q: &[T]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let energy = x.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / n;
    let signal = x.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let noise = x
        .iter()
        .zip(q)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / n;
    if energy == 0.0 || signal == 0.0 {
        return f64::NAN;
    }
    if noise == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (signal / noise).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::Granularity;

    #[test]
    fn exact_levels_give_infinite_sqnr() {
        let spec = QuantSpec::weight(2, Granularity::PerLayer).unwrap();
        let x = Tensor::<f64>::from_f64(&[4], &[-1.5, -0.5, 0.5, 1.5]).unwrap();
        let s = empirical_sqnr(&x, &StepParam::scalar(1.0).unwrap(), &spec).unwrap();
        assert_eq!(s, f64::INFINITY);
    }

    #[test]
    fn zero_signal_is_undefined() {
        let spec = QuantSpec::activation(2).unwrap();
        let x = Tensor::<f64>::zeros(&[4]);
        assert!(empirical_sqnr(&x, &StepParam::scalar(1.0).unwrap(), &spec)
            .unwrap()
            .is_nan());
    }
}
