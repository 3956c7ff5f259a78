//! Declarative architecture descriptions and the precision map.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::fake_quant::{FakeQuantActivation, FakeQuantWeight};
use super::layers::{BatchNorm, Conv2d, Dense, Flatten, MaxPool2d, Relu};
use super::model::{Layer, Model};
use crate::error::{Error, Result};
use crate::quant::{Granularity, StepGradForm};
use crate::real::Real;
use crate::tensor::Tensor;

/// Node kinds of a model graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    BatchNorm,
    MaxPool2d,
    Flatten,
    SoftmaxCrossEntropy,
    FakeQuantWeight,
    FakeQuantActivation,
}

impl LayerKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "dense" => Self::Dense,
            "conv2d" => Self::Conv2d,
            "relu" => Self::Relu,
            "batchnorm" | "batch_norm" => Self::BatchNorm,
            "maxpool2d" | "max_pool2d" => Self::MaxPool2d,
            "flatten" => Self::Flatten,
            "softmax_cross_entropy" => Self::SoftmaxCrossEntropy,
            "fake_quant_activation" => Self::FakeQuantActivation,
            "fake_quant_weight" => {
                return Err(Error::Config(
                    "fake_quant_weight nodes are inserted from the precision map, not declared"
                        .into(),
                ))
            }
            other => return Err(Error::Config(format!("unknown layer kind '{other}'"))),
        })
    }
}

/// Position of a weight layer, which decides its default precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    #[default]
    Hidden,
    First,
    Last,
    Downsample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default)]
    pub role: LayerRole,
}

impl LayerDesc {
    fn plain(name: &str, kind: &str) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            units: None,
            channels: None,
            kernel: None,
            padding: None,
            role: LayerRole::Hidden,
        }
    }

    fn dense(name: &str, units: usize, role: LayerRole) -> Self {
        Self {
            units: Some(units),
            role,
            ..Self::plain(name, "dense")
        }
    }

    fn conv(name: &str, channels: usize, role: LayerRole) -> Self {
        Self {
            channels: Some(channels),
            kernel: Some(3),
            padding: Some(1),
            role,
            ..Self::plain(name, "conv2d")
        }
    }
}

/// Layer list plus per-sample input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub input: Vec<usize>,
    pub layers: Vec<LayerDesc>,
}

impl ArchSpec {
    /// `inputs-256-128-classes` perceptron with BatchNorm and ReLU; activation quantizers after both hidden ReLUs.
    pub fn mlp_s(inputs: usize, classes: usize) -> Self {
        use LayerRole::*;
        let l = LayerDesc::plain;
        Self {
            name: "mlp-s".into(),
            input: vec![inputs],
            layers: vec![
                LayerDesc::dense("fc1", 256, First),
                l("bn1", "batchnorm"),
                l("relu1", "relu"),
                l("act1", "fake_quant_activation"),
                LayerDesc::dense("fc2", 128, Hidden),
                l("bn2", "batchnorm"),
                l("relu2", "relu"),
                l("act2", "fake_quant_activation"),
                LayerDesc::dense("fc3", classes, Last),
                l("loss", "softmax_cross_entropy"),
            ],
        }
    }

    /// Two 3x3 conv blocks (conv, BN, ReLU, quantizer, 2x2 pool) and a dense head, for 1x28x28 inputs.
    pub fn cnn_s(classes: usize) -> Self {
        use LayerRole::*;
        let l = LayerDesc::plain;
        Self {
            name: "cnn-s".into(),
            input: vec![1, 28, 28],
            layers: vec![
                LayerDesc::conv("conv1", 16, First),
                l("bn1", "batchnorm"),
                l("relu1", "relu"),
                l("act1", "fake_quant_activation"),
                l("pool1", "maxpool2d"),
                LayerDesc::conv("conv2", 32, Hidden),
                l("bn2", "batchnorm"),
                l("relu2", "relu"),
                l("act2", "fake_quant_activation"),
                l("pool2", "maxpool2d"),
                l("flatten", "flatten"),
                LayerDesc::dense("fc", classes, Last),
                l("loss", "softmax_cross_entropy"),
            ],
        }
    }
}

/// Bit-width of a quantizer, or no quantization at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Precision {
    Bits(u32),
    FullPrecision,
}

impl Precision {
    pub const FULL_BITS: u32 = 32;

    pub fn bits(&self) -> u32 {
        match self {
            Self::Bits(b) => *b,
            Self::FullPrecision => Self::FULL_BITS,
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Self::FullPrecision)
    }
}

impl TryFrom<u32> for Precision {
    type Error = String;

    fn try_from(bits: u32) -> std::result::Result<Self, String> {
        match bits {
            32 => Ok(Self::FullPrecision),
            1..=16 => Ok(Self::Bits(bits)),
            _ => Err(format!("bit-width must be 1..=16 or 32, got {bits}")),
        }
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> u32 {
        p.bits()
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bits(b) => write!(f, "{b}-bit"),
            Self::FullPrecision => f.write_str("FP"),
        }
    }
}

fn default_granularity() -> Granularity {
    Granularity::PerKernel
}
fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}

/// Global bit-widths, per-layer overrides, and quantizer options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPlan {
    pub bits_w: Precision,
    pub bits_a: Precision,
    /// Keyed by weight-layer or activation-quantizer name.
    #[serde(default)]
    pub overrides: BTreeMap<String, Precision>,
    #[serde(default = "default_granularity")]
    pub weight_granularity: Granularity,
    /// Keep first and last weight layers (and downsampling layers of binary models) unquantized.
    #[serde(default = "yes")]
    pub full_precision_ends: bool,
    #[serde(default)]
    pub step_grad_form: StepGradForm,
    #[serde(default = "one")]
    pub step_grad_scale: f64,
}

impl PrecisionPlan {
    pub fn uniform(bits_w: Precision, bits_a: Precision) -> Self {
        Self {
            bits_w,
            bits_a,
            overrides: BTreeMap::new(),
            weight_granularity: default_granularity(),
            full_precision_ends: true,
            step_grad_form: StepGradForm::Corrected,
            step_grad_scale: 1.0,
        }
    }

    pub fn full_precision() -> Self {
        Self::uniform(Precision::FullPrecision, Precision::FullPrecision)
    }

    /// `WxAy` with both widths equal.
    pub fn bits(bits: u32) -> Result<Self> {
        let p = Precision::try_from(bits).map_err(Error::Config)?;
        Ok(Self::uniform(p, p))
    }

    pub fn weight_precision(&self, desc: &LayerDesc) -> Precision {
        if let Some(p) = self.overrides.get(&desc.name) {
            return *p;
        }
        let binary = self.bits_w == Precision::Bits(1);
        match desc.role {
            LayerRole::First | LayerRole::Last if self.full_precision_ends => {
                Precision::FullPrecision
            }
            LayerRole::Downsample if self.full_precision_ends && binary => Precision::FullPrecision,
            _ => self.bits_w,
        }
    }

    pub fn activation_precision(&self, name: &str) -> Precision {
        self.overrides.get(name).copied().unwrap_or(self.bits_a)
    }
}

fn he_init<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| T::lit(normal.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn weight_quant<T: Real>(
    plan: &PrecisionPlan,
    desc: &LayerDesc,
    out: usize,
) -> Result<Option<FakeQuantWeight<T>>> {
    match plan.weight_precision(desc) {
        Precision::FullPrecision => Ok(None),
        Precision::Bits(b) => {
            let mut q = FakeQuantWeight::new(b, plan.weight_granularity, out)?;
            q.grad_form = plan.step_grad_form;
            q.grad_scale = plan.step_grad_scale;
            Ok(Some(q))
        }
    }
}

/// Instantiates `arch` under `plan`, with He-normal weights drawn from `seed`.
///
/// Weight quantizers wrap every dense/conv layer the plan quantizes; activation
/// quantizers resolved to full precision are left out of the model.
pub fn build_model<T: Real>(arch: &ArchSpec, plan: &PrecisionPlan, seed: u64) -> Result<Model<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = arch.input.clone();
    let mut layers = Vec::new();
    let mut prev: Option<LayerKind> = None;
    for (i, desc) in arch.layers.iter().enumerate() {
        let kind = LayerKind::parse(&desc.kind)?;
        let bad = |msg: String| Error::Config(format!("layer {i} ({}): {msg}", desc.name));
        match kind {
            LayerKind::Dense => {
                let [fan_in] = shape[..] else {
                    return Err(bad(format!("dense needs a flat input, got {shape:?}")));
                };
                let units = desc
                    .units
                    .ok_or_else(|| bad("dense needs 'units'".into()))?;
                let mut d = Dense::new(
                    &desc.name,
                    he_init(&mut rng, &[units, fan_in], fan_in),
                    Tensor::zeros(&[units]),
                );
                d.quant = weight_quant(plan, desc, units)?;
                layers.push(Layer::Dense(d));
                shape = vec![units];
            }
            LayerKind::Conv2d => {
                let [c, h, w] = shape[..] else {
                    return Err(bad(format!(
                        "conv2d needs a [c, h, w] input, got {shape:?}"
                    )));
                };
                let out = desc
                    .channels
                    .ok_or_else(|| bad("conv2d needs 'channels'".into()))?;
                let k = desc.kernel.unwrap_or(3);
                let pad = desc.padding.unwrap_or(0);
                let weight = he_init(&mut rng, &[out, c, k, k], c * k * k);
                let mut conv = Conv2d::new(&desc.name, weight, Tensor::zeros(&[out]), pad);
                let (ho, wo) = conv
                    .out_hw(h, w)
                    .ok_or_else(|| bad("input smaller than kernel".into()))?;
                conv.quant = weight_quant(plan, desc, out)?;
                layers.push(Layer::Conv2d(conv));
                shape = vec![out, ho, wo];
            }
            LayerKind::BatchNorm => {
                layers.push(Layer::BatchNorm(BatchNorm::new(&desc.name, shape[0])))
            }
            LayerKind::Relu => layers.push(Layer::Relu(Relu::new(&desc.name))),
            LayerKind::MaxPool2d => {
                let [c, h, w] = shape[..] else {
                    return Err(bad(format!(
                        "maxpool2d needs a [c, h, w] input, got {shape:?}"
                    )));
                };
                layers.push(Layer::MaxPool2d(MaxPool2d::new(&desc.name)));
                shape = vec![c, h / 2, w / 2];
            }
            LayerKind::Flatten => {
                layers.push(Layer::Flatten(Flatten::new(&desc.name)));
                shape = vec![shape.iter().product()];
            }
            LayerKind::FakeQuantActivation => {
                if prev != Some(LayerKind::Relu) {
                    return Err(bad(
                        "activation quantizers must directly follow a ReLU".into()
                    ));
                }
                if let Precision::Bits(b) = plan.activation_precision(&desc.name) {
                    let mut q = FakeQuantActivation::new(&desc.name, b)?;
                    q.grad_scale = plan.step_grad_scale;
                    layers.push(Layer::FakeQuantActivation(q));
                }
            }
            LayerKind::SoftmaxCrossEntropy => {
                if i + 1 != arch.layers.len() {
                    return Err(bad("the loss must be the last node".into()));
                }
            }
            LayerKind::FakeQuantWeight => unreachable!("rejected by parse"),
        }
        prev = Some(kind);
    }
    Ok(Model::new(arch.clone(), plan.clone(), layers))
}
