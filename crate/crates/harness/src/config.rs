//! Experiment configuration (JSON).
//!
//! Every field except `name`, `arch`, `bits_w`, `bits_a`, `optimizer` and `schedule`
//! has a default; see the README for the full reference.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uniq::nn::{ArchSpec, Precision, PrecisionPlan};
use uniq::optim::{weight_decay_for_bits, OptimizerKind, Schedule, ScheduleKind};
use uniq::quant::{Granularity, StepGradForm};
use uniq::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// IDX files from `UNIQ_DATA_DIR` (or `data/mnist` under the workspace).
    Mnist {
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    /// Gaussian blobs: class means drawn from `N(0, separation^2 I)`, unit noise.
    SyntheticGaussian {
        classes: usize,
        dim: usize,
        #[serde(default = "default_synthetic_train")]
        train: usize,
        #[serde(default = "default_synthetic_test")]
        test: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_synthetic_train() -> usize {
    2048
}
fn default_synthetic_test() -> usize {
    512
}
fn default_separation() -> f64 {
    1.0
}

impl DatasetConfig {
    pub fn mnist() -> Self {
        Self::Mnist { train_limit: None, test_limit: None }
    }

    pub fn classes(&self) -> usize {
        match self {
            Self::Mnist { .. } => 10,
            Self::SyntheticGaussian { classes, .. } => *classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "mlp-s")]
    MlpS,
    #[serde(rename = "cnn-s")]
    CnnS,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitMethod {
    /// MSE-optimal unit step times the measured input scale.
    OursMse,
    /// `2 mean(|x|) / sqrt(Q_P)`.
    LsqHeuristic,
    Constant { value: f64 },
}

impl InitMethod {
    pub fn label(&self) -> String {
        match self {
            Self::OursMse => "ours_mse".into(),
            Self::LsqHeuristic => "lsq_heuristic".into(),
            Self::Constant { value } => format!("constant({value})"),
        }
    }
}

/// Learning-rate schedule without its length, which comes from `epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(default = "default_schedule_kind")]
    pub kind: ScheduleKind,
    pub base_lr: f64,
    #[serde(default)]
    pub warmup_lr: f64,
    #[serde(default)]
    pub warmup_epochs: usize,
}

fn default_schedule_kind() -> ScheduleKind {
    ScheduleKind::Cosine
}

impl ScheduleConfig {
    pub fn cosine(base_lr: f64) -> Self {
        Self { kind: ScheduleKind::Cosine, base_lr, warmup_lr: 0.0, warmup_epochs: 0 }
    }

    pub fn warmup(warmup_lr: f64, warmup_epochs: usize, base_lr: f64) -> Self {
        Self { kind: ScheduleKind::WarmupThenCosine, base_lr, warmup_lr, warmup_epochs }
    }

    pub fn build(&self, epochs: usize) -> Schedule {
        Schedule {
            kind: self.kind,
            base_lr: self.base_lr,
            warmup_lr: self.warmup_lr,
            warmup_epochs: self.warmup_epochs,
            total_epochs: epochs,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            ScheduleKind::Cosine => format!("cosine(lr={})", self.base_lr),
            ScheduleKind::WarmupThenCosine => {
                format!("warmup({}ep@{})+cosine(lr={})", self.warmup_epochs, self.warmup_lr, self.base_lr)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Record every this many optimizer steps during the first `dense_epochs` epochs.
    #[serde(default = "default_every")]
    pub every_steps: usize,
    #[serde(default = "default_dense_epochs")]
    pub dense_epochs: usize,
}

fn yes() -> bool {
    true
}
fn default_every() -> usize {
    50
}
fn default_dense_epochs() -> usize {
    5
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { enabled: true, every_steps: default_every(), dense_epochs: default_dense_epochs() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "DatasetConfig::mnist")]
    pub dataset: DatasetConfig,
    pub arch: Arch,
    pub bits_w: Precision,
    pub bits_a: Precision,
    #[serde(default)]
    pub overrides: BTreeMap<String, Precision>,
    #[serde(default = "default_granularity")]
    pub weight_granularity: Granularity,
    #[serde(default)]
    pub step_grad_form: StepGradForm,
    #[serde(default = "default_init")]
    pub init_method: InitMethod,
    /// Parent checkpoint; weights (and BatchNorm statistics) are copied from it.
    #[serde(default)]
    pub init_from: Option<PathBuf>,
    /// Reuse the parent's step sizes instead of re-initializing them.
    #[serde(default)]
    pub inherit_steps: bool,
    /// Require 1-bit runs to start from a 2-bit parent.
    #[serde(default = "yes")]
    pub chain_init: bool,
    pub optimizer: OptimizerKind,
    /// Defaults by weight bit-width: 0 (1-bit), 2.5e-5, 5e-5, else 1e-4.
    #[serde(default)]
    pub weight_decay: Option<f64>,
    pub schedule: ScheduleConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Calibration batches for activation step sizes.
    #[serde(default = "default_stat_batches")]
    pub stat_batches: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
}

fn default_granularity() -> Granularity {
    Granularity::PerKernel
}
fn default_init() -> InitMethod {
    InitMethod::OursMse
}
fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    128
}
fn default_stat_batches() -> usize {
    100
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(name: &str, arch: Arch, bits_w: Precision, bits_a: Precision, optimizer: OptimizerKind, schedule: ScheduleConfig) -> Self {
        Self {
            name: name.into(),
            dataset: DatasetConfig::mnist(),
            arch,
            bits_w,
            bits_a,
            overrides: BTreeMap::new(),
            weight_granularity: default_granularity(),
            step_grad_form: StepGradForm::Corrected,
            init_method: default_init(),
            init_from: None,
            inherit_steps: false,
            chain_init: true,
            optimizer,
            weight_decay: None,
            schedule,
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            stat_batches: default_stat_batches(),
            output_dir: default_output(),
            dynamics: DynamicsConfig::default(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be non-empty and contain no path separators".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let Some(wd) = self.weight_decay {
            if !(wd >= 0.0) {
                return bad(format!("weight decay must be >= 0, got {wd}"));
            }
        }
        if let InitMethod::Constant { value } = self.init_method {
            if !(value > 0.0) || !value.is_finite() {
                return bad(format!("constant step size must be positive, got {value}"));
            }
        }
        if self.epochs > 0 {
            self.schedule.build(self.epochs).validate()?;
        }
        if self.dynamics.enabled && self.dynamics.every_steps == 0 {
            return bad("dynamics.every_steps must be positive".into());
        }
        if let DatasetConfig::SyntheticGaussian { classes, dim, train, test, .. } = self.dataset {
            if classes < 2 || dim == 0 || train == 0 || test == 0 {
                return bad("synthetic dataset needs >= 2 classes and non-empty splits".into());
            }
            if self.arch == Arch::CnnS {
                return bad("cnn-s needs 28x28 images; use mlp-s with synthetic data".into());
            }
        }
        let needs_parent = self.chain_init && self.bits_w == Precision::Bits(1);
        if needs_parent && self.init_from.is_none() {
            return bad("1-bit runs with chain_init need init_from pointing at a 2-bit checkpoint".into());
        }
        Ok(())
    }

    pub fn arch_spec(&self) -> ArchSpec {
        let classes = self.dataset.classes();
        match (self.arch, &self.dataset) {
            (Arch::MlpS, DatasetConfig::SyntheticGaussian { dim, .. }) => ArchSpec::mlp_s(*dim, classes),
            (Arch::MlpS, DatasetConfig::Mnist { .. }) => ArchSpec::mlp_s(28 * 28, classes),
            (Arch::CnnS, _) => ArchSpec::cnn_s(classes),
        }
    }

    pub fn precision_plan(&self) -> PrecisionPlan {
        let mut plan = PrecisionPlan::uniform(self.bits_w, self.bits_a);
        plan.overrides = self.overrides.clone();
        plan.weight_granularity = self.weight_granularity;
        plan.step_grad_form = self.step_grad_form;
        plan
    }

    pub fn effective_weight_decay(&self) -> f64 {
        self.weight_decay.unwrap_or_else(|| weight_decay_for_bits(self.bits_w.bits()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }
}
