use std::collections::BTreeMap;

use super::arch::{ArchSpec, LayerKind, PrecisionPlan};
use super::fake_quant::{ActState, FakeQuantActivation, FakeQuantWeight};
use super::layers::{BatchNorm, Conv2d, Dense, Flatten, MaxPool2d, Relu};
use super::Phase;
use crate::error::{Error, Result};
use crate::optim::{ParamKind, ParamSlot, Parameters};
use crate::quant::StepParam;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu),
    MaxPool2d(MaxPool2d),
    Flatten(Flatten),
    FakeQuantActivation(FakeQuantActivation<T>),
}

impl<T: Real> Layer<T> {
    pub fn name(&self) -> &str {
        match self {
            Layer::Dense(l) => &l.name,
            Layer::Conv2d(l) => &l.name,
            Layer::BatchNorm(l) => &l.name,
            Layer::Relu(l) => &l.name,
            Layer::MaxPool2d(l) => &l.name,
            Layer::Flatten(l) => &l.name,
            Layer::FakeQuantActivation(l) => &l.name,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::Flatten(_) => LayerKind::Flatten,
            Layer::FakeQuantActivation(_) => LayerKind::FakeQuantActivation,
        }
    }

    fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, phase),
            Layer::Relu(l) => l.forward(x),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::Flatten(l) => l.forward(x),
            Layer::FakeQuantActivation(l) => l.forward(x),
        }
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense(l) => l.backward(dy),
            Layer::Conv2d(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::MaxPool2d(l) => l.backward(dy),
            Layer::Flatten(l) => l.backward(dy),
            Layer::FakeQuantActivation(l) => l.backward(dy),
        }
    }
}

/// A stored tensor: name, shape, and values.
pub type NamedTensor<T> = (String, Vec<usize>, Vec<T>);

/// Borrowed view of one weight quantizer and the latent weights it wraps.
pub struct WeightQuantizer<'a, T> {
    pub layer: &'a str,
    pub weight: &'a Tensor<T>,
    pub quant: &'a mut FakeQuantWeight<T>,
}

/// Sequential network built by [`build_model`](super::build_model).
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub arch: ArchSpec,
    pub plan: PrecisionPlan,
    layers: Vec<Layer<T>>,
    pending_backward: bool,
}

fn locate(layer: usize, e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::Shape { layer, msg },
        other => other,
    }
}

impl<T: Real> Model<T> {
    pub(crate) fn new(arch: ArchSpec, plan: PrecisionPlan, layers: Vec<Layer<T>>) -> Self {
        Self {
            arch,
            plan,
            layers,
            pending_backward: false,
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Graph nodes in execution order, with weight quantizers shown after the layer they feed.
    pub fn kinds(&self) -> Vec<LayerKind> {
        let mut out = Vec::new();
        for l in &self.layers {
            let quantized = match l {
                Layer::Dense(d) => d.quant.is_some(),
                Layer::Conv2d(c) => c.quant.is_some(),
                _ => false,
            };
            if quantized {
                out.push(LayerKind::FakeQuantWeight);
            }
            out.push(l.kind());
        }
        out.push(LayerKind::SoftmaxCrossEntropy);
        out
    }

    /// Runs the network on a `[batch, ..input]` tensor and returns the logits.
    pub fn forward(&mut self, x: &Tensor<T>, phase: Phase) -> Result<Tensor<T>> {
        if x.shape().len() != self.arch.input.len() + 1 || x.shape()[1..] != self.arch.input[..] {
            return Err(Error::Shape {
                layer: 0,
                msg: format!(
                    "expected [batch, {:?}], got {:?}",
                    self.arch.input,
                    x.shape()
                ),
            });
        }
        if x.has_nan() {
            return Err(Error::NaN("model input".into()));
        }
        self.pending_backward = false;
        let mut h = self.layers[0].forward(x, phase).map_err(|e| locate(0, e))?;
        for (i, l) in self.layers.iter_mut().enumerate().skip(1) {
            h = l.forward(&h, phase).map_err(|e| locate(i, e))?;
        }
        self.pending_backward = true;
        Ok(h)
    }

    /// Back-propagates the gradient of the loss with respect to the logits.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.pending_backward {
            return Err(Error::State(
                "backward called without a preceding forward".into(),
            ));
        }
        self.pending_backward = false;
        let mut g = dy.clone();
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            g = l.backward(&g).map_err(|e| locate(i, e))?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    d.weight.zero_grad();
                    d.bias.zero_grad();
                    if let Some(q) = &mut d.quant {
                        q.step.zero_grad();
                    }
                }
                Layer::Conv2d(c) => {
                    c.weight.zero_grad();
                    c.bias.zero_grad();
                    if let Some(q) = &mut c.quant {
                        q.step.zero_grad();
                    }
                }
                Layer::BatchNorm(b) => {
                    b.gamma.zero_grad();
                    b.beta.zero_grad();
                }
                Layer::FakeQuantActivation(a) => a.step.zero_grad(),
                _ => {}
            }
        }
    }

    pub fn weight_quantizers(&mut self) -> Vec<WeightQuantizer<'_, T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Dense(d) => d.quant.as_mut().map(|q| WeightQuantizer {
                    layer: &d.name,
                    weight: &d.weight,
                    quant: q,
                }),
                Layer::Conv2d(c) => c.quant.as_mut().map(|q| WeightQuantizer {
                    layer: &c.name,
                    weight: &c.weight,
                    quant: q,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn activation_quantizers(&mut self) -> Vec<&mut FakeQuantActivation<T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::FakeQuantActivation(a) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn set_activation_state(&mut self, state: ActState) {
        for a in self.activation_quantizers() {
            a.state = state;
        }
    }

    /// Switches every quantizer to its frozen-offset surrogate at the current point.
    ///
    /// Activation quantizers freeze at the inputs of the last forward pass, so call
    /// this after one forward on the batch being checked.
    pub fn freeze_surrogate(&mut self) -> Result<()> {
        for wq in self.weight_quantizers() {
            wq.quant.freeze_surrogate(wq.weight)?;
        }
        for a in self.activation_quantizers() {
            a.freeze_surrogate()?;
        }
        Ok(())
    }

    pub fn thaw(&mut self) {
        for wq in self.weight_quantizers() {
            wq.quant.thaw();
        }
        for a in self.activation_quantizers() {
            a.thaw();
        }
    }

    /// Step sizes keyed by quantizer name (the weight layer's name, or the activation node's).
    pub fn step_sizes(&self) -> BTreeMap<String, Vec<f64>> {
        let f = |s: &StepParam<T>| s.delta.iter().map(|d| d.as_f64()).collect::<Vec<_>>();
        let mut out = BTreeMap::new();
        for l in &self.layers {
            match l {
                Layer::Dense(Dense {
                    name,
                    quant: Some(q),
                    ..
                })
                | Layer::Conv2d(Conv2d {
                    name,
                    quant: Some(q),
                    ..
                }) => {
                    out.insert(name.clone(), f(&q.step));
                }
                Layer::FakeQuantActivation(a) => {
                    out.insert(a.name.clone(), f(&a.step));
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites the step sizes of the named quantizer.
    pub fn set_step_size(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let step = self
            .layers
            .iter_mut()
            .find_map(|l| match l {
                Layer::Dense(Dense {
                    name: n,
                    quant: Some(q),
                    ..
                })
                | Layer::Conv2d(Conv2d {
                    name: n,
                    quant: Some(q),
                    ..
                }) if n == name => Some(&mut q.step),
                Layer::FakeQuantActivation(a) if a.name == name => Some(&mut a.step),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidInput(format!("no quantizer named '{name}'")))?;
        if delta.len() != step.groups() {
            return Err(Error::InvalidInput(format!(
                "quantizer '{name}' has {} step groups, got {}",
                step.groups(),
                delta.len()
            )));
        }
        let new = StepParam::new(delta.iter().map(|&d| T::lit(d)).collect())?;
        step.delta = new.delta;
        Ok(())
    }

    /// Every non-step tensor, including BatchNorm running statistics, in a fixed order.
    pub fn named_tensors(&self) -> Vec<NamedTensor<T>> {
        let mut out = Vec::new();
        let mut push = |layer: &str, field: &str, shape: &[usize], data: &[T]| {
            out.push((format!("{layer}.{field}"), shape.to_vec(), data.to_vec()));
        };
        for l in &self.layers {
            match l {
                Layer::Dense(Dense {
                    name, weight, bias, ..
                })
                | Layer::Conv2d(Conv2d {
                    name, weight, bias, ..
                }) => {
                    push(name, "weight", weight.shape(), weight.data());
                    push(name, "bias", bias.shape(), bias.data());
                }
                Layer::BatchNorm(b) => {
                    let c = [b.channels()];
                    push(&b.name, "gamma", &c, b.gamma.data());
                    push(&b.name, "beta", &c, b.beta.data());
                    push(&b.name, "running_mean", &c, &b.running_mean);
                    push(&b.name, "running_var", &c, &b.running_var);
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites one tensor listed by [`named_tensors`](Self::named_tensors).
    pub fn load_tensor(&mut self, full_name: &str, shape: &[usize], data: &[T]) -> Result<()> {
        let (layer, field) = full_name
            .rsplit_once('.')
            .ok_or_else(|| Error::Checkpoint(format!("malformed tensor name '{full_name}'")))?;
        let target: Option<(Vec<usize>, &mut [T])> = self
            .layers
            .iter_mut()
            .find(|l| l.name() == layer)
            .and_then(|l| match (l, field) {
                (
                    Layer::Dense(Dense { weight: t, .. }) | Layer::Conv2d(Conv2d { weight: t, .. }),
                    "weight",
                )
                | (
                    Layer::Dense(Dense { bias: t, .. }) | Layer::Conv2d(Conv2d { bias: t, .. }),
                    "bias",
                )
                | (Layer::BatchNorm(BatchNorm { gamma: t, .. }), "gamma")
                | (Layer::BatchNorm(BatchNorm { beta: t, .. }), "beta") => {
                    Some((t.shape().to_vec(), t.data_mut()))
                }
                (Layer::BatchNorm(b), "running_mean") => {
                    Some((vec![b.running_mean.len()], &mut b.running_mean[..]))
                }
                (Layer::BatchNorm(b), "running_var") => {
                    Some((vec![b.running_var.len()], &mut b.running_var[..]))
                }
                _ => None,
            });
        let (expected, dst) = target
            .ok_or_else(|| Error::Checkpoint(format!("model has no tensor '{full_name}'")))?;
        if expected != shape || dst.len() != data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor '{full_name}': shape {shape:?} does not match {expected:?}"
            )));
        }
        dst.copy_from_slice(data);
        Ok(())
    }

    /// Number of trainable scalars, excluding step sizes.
    pub fn param_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(n, ..)| !n.ends_with("running_mean") && !n.ends_with("running_var"))
            .map(|t| t.2.len())
            .sum()
    }
}

impl<T: Real> Parameters<T> for Model<T> {
    /// Order: per layer weight, bias, weight step; BatchNorm scale, shift; activation step.
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_, T>)) {
        fn tensor<T: Real>(
            kind: ParamKind,
            t: &mut Tensor<T>,
            f: &mut dyn FnMut(ParamSlot<'_, T>),
        ) {
            let (value, grad) = t.value_and_grad_mut();
            f(ParamSlot { kind, value, grad });
        }
        fn step<T: Real>(s: &mut StepParam<T>, f: &mut dyn FnMut(ParamSlot<'_, T>)) {
            f(ParamSlot {
                kind: ParamKind::StepSize,
                value: &mut s.delta,
                grad: &s.grad,
            });
        }
        for l in &mut self.layers {
            match l {
                Layer::Dense(Dense {
                    weight,
                    bias,
                    quant,
                    ..
                })
                | Layer::Conv2d(Conv2d {
                    weight,
                    bias,
                    quant,
                    ..
                }) => {
                    tensor(ParamKind::Weight, weight, f);
                    tensor(ParamKind::Bias, bias, f);
                    if let Some(q) = quant {
                        step(&mut q.step, f);
                    }
                }
                Layer::BatchNorm(b) => {
                    tensor(ParamKind::Norm, &mut b.gamma, f);
                    tensor(ParamKind::Norm, &mut b.beta, f);
                }
                Layer::FakeQuantActivation(a) => step(&mut a.step, f),
                _ => {}
            }
        }
    }
}
