//! Fake-quantization nodes: quantize in the forward pass, straight-through in the backward pass.

use crate::diagnostics::surrogate::{freeze, frozen_value, Branch};
use crate::error::{Error, Result};
use crate::mse::ActivationScaleEstimator;
use crate::quant::{
    grad_input, grad_step_activation, grad_step_weight_with, group_len, quantize_activation,
    quantize_weight, Granularity, QuantMode, QuantSpec, StepGradForm, StepParam,
};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-element frozen offsets of the surrogate network used by gradient checks.
#[derive(Debug, Clone)]
struct Frozen<T> {
    offset: Vec<T>,
    branch: Vec<Branch>,
}

fn freeze_all<T: Real>(x: &Tensor<T>, step: &StepParam<T>, spec: &QuantSpec) -> Result<Frozen<T>> {
    let glen = group_len(x.shape(), step, spec)?;
    let (offset, branch) = x
        .data()
        .chunks(glen)
        .zip(&step.delta)
        .flat_map(|(chunk, &d)| {
            chunk
                .iter()
                .map(move |&v| freeze(v, d, spec.levels, spec.mode))
        })
        .unzip();
    Ok(Frozen { offset, branch })
}

fn eval_frozen<T: Real>(
    x: &Tensor<T>,
    step: &StepParam<T>,
    spec: &QuantSpec,
    f: &Frozen<T>,
) -> Result<Tensor<T>> {
    if f.offset.len() != x.len() {
        return Err(Error::State(
            "surrogate was frozen for a different input size".into(),
        ));
    }
    let glen = group_len(x.shape(), step, spec)?;
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            frozen_value(
                v,
                step.delta[i / glen],
                spec.levels,
                spec.mode,
                f.offset[i],
                f.branch[i],
            )
        })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Accumulates `scale * Σ upstream * dQ/dΔ` into each group's step gradient.
fn accumulate_step_grad<T: Real>(
    step: &mut StepParam<T>,
    upstream: &[T],
    d_step: &[T],
    glen: usize,
    scale: f64,
) {
    let scale = T::lit(scale);
    for (g, (up, ds)) in upstream.chunks(glen).zip(d_step.chunks(glen)).enumerate() {
        let s: T = up.iter().zip(ds).map(|(&a, &b)| a * b).sum();
        step.grad[g] += scale * s;
    }
}

/// Quantizer wrapping the weight tensor of one dense or convolution layer.
#[derive(Debug, Clone)]
pub struct FakeQuantWeight<T> {
    pub bits: u32,
    pub spec: QuantSpec,
    pub step: StepParam<T>,
    pub grad_form: StepGradForm,
    /// Multiplier on step-size gradients (1 unless reproducing LSQ's scaling).
    pub grad_scale: f64,
    frozen: Option<Frozen<T>>,
}

impl<T: Real> FakeQuantWeight<T> {
    /// Quantizer for a weight whose leading dimension is `out_channels`, with placeholder steps of 1.
    pub fn new(bits: u32, granularity: Granularity, out_channels: usize) -> Result<Self> {
        let spec = QuantSpec::weight(bits, granularity)?;
        let groups = match granularity {
            Granularity::PerLayer => 1,
            Granularity::PerKernel => out_channels,
        };
        Ok(Self {
            bits,
            spec,
            step: StepParam::new(vec![T::one(); groups])?,
            grad_form: StepGradForm::Corrected,
            grad_scale: 1.0,
            frozen: None,
        })
    }

    pub fn forward(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.frozen {
            Some(f) => eval_frozen(w, &self.step, &self.spec, f),
            None => quantize_weight(w, &self.step, &self.spec),
        }
    }

    /// Gradient with respect to the latent weights; step gradients are accumulated.
    pub fn backward(&mut self, w: &Tensor<T>, upstream: &[T]) -> Result<Vec<T>> {
        let mask = grad_input(w, &self.step, &self.spec)?;
        let d_step = grad_step_weight_with(w, &self.step, &self.spec, self.grad_form)?;
        let glen = group_len(w.shape(), &self.step, &self.spec)?;
        accumulate_step_grad(
            &mut self.step,
            upstream,
            d_step.data(),
            glen,
            self.grad_scale,
        );
        Ok(upstream
            .iter()
            .zip(mask.data())
            .map(|(&g, &m)| g * m)
            .collect())
    }

    /// Switches the forward pass to the frozen-offset surrogate at the current weights.
    pub fn freeze_surrogate(&mut self, w: &Tensor<T>) -> Result<()> {
        self.frozen = Some(freeze_all(w, &self.step, &self.spec)?);
        Ok(())
    }

    pub fn thaw(&mut self) {
        self.frozen = None;
    }
}

/// What an activation quantizer does in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActState {
    Quantize,
    /// Pass inputs through unchanged and record calibration statistics.
    Observe,
}

/// Activation quantizer placed directly after a ReLU.
#[derive(Debug, Clone)]
pub struct FakeQuantActivation<T> {
    pub name: String,
    pub bits: u32,
    pub spec: QuantSpec,
    pub step: StepParam<T>,
    pub state: ActState,
    pub observer: ActivationScaleEstimator,
    pub grad_scale: f64,
    input: Option<Tensor<T>>,
    consumed: bool,
    frozen: Option<Frozen<T>>,
}

impl<T: Real> FakeQuantActivation<T> {
    pub fn new(name: &str, bits: u32) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            bits,
            spec: QuantSpec::activation(bits)?,
            step: StepParam::scalar(T::one())?,
            state: ActState::Quantize,
            observer: ActivationScaleEstimator::new(),
            grad_scale: 1.0,
            input: None,
            consumed: true,
            frozen: None,
        })
    }

    /// Input of the most recent forward pass.
    pub fn last_input(&self) -> Option<&Tensor<T>> {
        self.input.as_ref()
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = match self.state {
            ActState::Observe => {
                if x.has_nan() {
                    return Err(Error::NaN(format!("{} calibration input", self.name)));
                }
                self.observer.observe(x.data());
                x.clone()
            }
            ActState::Quantize => match &self.frozen {
                Some(f) => eval_frozen(x, &self.step, &self.spec, f)?,
                None => quantize_activation(x, &self.step, &self.spec)?,
            },
        };
        self.input = Some(x.clone());
        self.consumed = false;
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if self.consumed {
            return Err(Error::State(format!(
                "{}: backward called before forward",
                self.name
            )));
        }
        self.consumed = true;
        let x = self.input.as_ref().expect("input cached by forward");
        if self.state == ActState::Observe {
            return Ok(dy.clone());
        }
        let mask = grad_input(x, &self.step, &self.spec)?;
        let d_step = grad_step_activation(x, &self.step, &self.spec)?;
        accumulate_step_grad(
            &mut self.step,
            dy.data(),
            d_step.data(),
            x.len(),
            self.grad_scale,
        );
        let data = dy
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&g, &m)| g * m)
            .collect();
        Tensor::new(dy.shape(), data)
    }

    /// Freezes the surrogate at the input of the last forward pass.
    pub fn freeze_surrogate(&mut self) -> Result<()> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State(format!("{}: no input to freeze at", self.name)))?;
        self.frozen = Some(freeze_all(x, &self.step, &self.spec)?);
        Ok(())
    }

    pub fn thaw(&mut self) {
        self.frozen = None;
    }

    pub fn mode(&self) -> QuantMode {
        self.spec.mode
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_chain_step_gradient() {
        // L = Q_a(x): dL/dΔ is exactly the elementwise step derivative.
        let mut q = FakeQuantActivation::<f64>::new("a", 2).unwrap();
        let x = Tensor::from_f64(&[1], &[0.6]).unwrap();
        q.forward(&x).unwrap();
        q.backward(&Tensor::from_f64(&[1], &[1.0]).unwrap())
            .unwrap();
        assert!((q.step.grad[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn observe_mode_is_identity() {
        let mut q = FakeQuantActivation::<f32>::new("a", 2).unwrap();
        q.state = ActState::Observe;
        let x = Tensor::from_f64(&[3], &[0.1, 0.7, 2.3]).unwrap();
        assert_eq!(q.forward(&x).unwrap(), x);
        assert_eq!(q.observer.batches(), 1);
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut q = FakeQuantActivation::<f32>::new("a", 2).unwrap();
        assert!(matches!(
            q.backward(&Tensor::zeros(&[1])),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn weight_step_grad_sums_per_kernel() {
        let mut q = FakeQuantWeight::<f64>::new(2, Granularity::PerKernel, 2).unwrap();
        let w = Tensor::from_f64(&[2, 2], &[0.7, 10.0, 0.7, -10.0]).unwrap();
        let dl = q.backward(&w, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(dl, vec![1.0, 0.0, 1.0, 0.0]);
        assert!((q.step.grad[0] - (-0.2 + 1.5)).abs() < 1e-12);
        assert!((q.step.grad[1] - (-0.2 - 1.5)).abs() < 1e-12);
    }
}
