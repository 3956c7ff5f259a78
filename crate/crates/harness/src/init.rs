//! Step-size initialization, optionally starting from a parent checkpoint.

use std::collections::BTreeMap;

use log::{info, warn};
use uniq::mse::{estimate_weight_scale, init_step, lsq_heuristic_init, lsq_init_from_mean_abs, ActivationScaleEstimator};
use uniq::nn::checkpoint::Checkpoint;
use uniq::nn::{ActState, Model, Phase, Precision};
use uniq::quant::QuantMode;
use uniq::{Error, Result, Tensor};

use crate::config::{ExperimentConfig, InitMethod};
use crate::data::Dataset;

/// What [`initialize`] did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitReport {
    /// Step sizes chosen, keyed by quantizer name.
    pub steps: BTreeMap<String, Vec<f64>>,
    /// Quantizers whose step sizes came from the parent checkpoint.
    pub inherited: Vec<String>,
    pub calibration_batches: usize,
    pub warnings: Vec<String>,
}

/// Weight step sizes for one quantized layer.
pub fn weight_steps(method: InitMethod, w: &Tensor<f32>, spec: &uniq::quant::QuantSpec, bits: u32) -> Result<(Vec<f64>, Vec<String>)> {
    let groups = match spec.granularity {
        uniq::quant::Granularity::PerLayer => 1,
        uniq::quant::Granularity::PerKernel => w.dim0(),
    };
    match method {
        InitMethod::Constant { value } => Ok((vec![value; groups], Vec::new())),
        InitMethod::OursMse => {
            let est = estimate_weight_scale(w, spec.granularity)?;
            let steps = est.scales.iter().map(|&s| init_step(QuantMode::Weight, spec.levels, s)).collect::<Result<_>>()?;
            Ok((steps, est.warnings))
        }
        InitMethod::LsqHeuristic => {
            let glen = w.len() / groups;
            let steps = w.data().chunks(glen).map(|g| lsq_heuristic_init(g, bits, QuantMode::Weight)).collect::<Result<_>>()?;
            Ok((steps, Vec::new()))
        }
    }
}

/// Activation step size from calibration statistics.
pub fn activation_step(method: InitMethod, observer: &ActivationScaleEstimator, levels: u32, bits: u32) -> Result<(f64, Vec<String>)> {
    match method {
        InitMethod::Constant { value } => Ok((value, Vec::new())),
        InitMethod::OursMse => {
            let est = observer.finish()?;
            Ok((init_step(QuantMode::Activation, levels, est.scales[0])?, est.warnings))
        }
        InitMethod::LsqHeuristic => Ok((lsq_init_from_mean_abs(observer.mean_input(), bits, QuantMode::Activation)?, Vec::new())),
    }
}

/// Loads the parent checkpoint (if any) and sets every step size not inherited from it.
///
/// Activation statistics come from one forward pass over the first `stat_batches`
/// training batches, in training mode with all activation quantizers observing and
/// weight quantizers active. Tensors other than step sizes are left untouched.
pub fn initialize(model: &mut Model<f32>, cfg: &ExperimentConfig, train: &Dataset) -> Result<InitReport> {
    let mut report = InitReport::default();
    if let Some(path) = &cfg.init_from {
        let parent = Checkpoint::read(path)?;
        if cfg.chain_init && cfg.bits_w == Precision::Bits(1) && parent.header.plan.bits_w != Precision::Bits(2) {
            return Err(Error::Config(format!(
                "{}: chain init of a 1-bit model needs a 2-bit parent, {} has {}",
                cfg.name,
                path.display(),
                parent.header.plan.bits_w
            )));
        }
        report.inherited = parent.apply_to(model, cfg.inherit_steps)?;
        info!("{}: loaded {} (inherited steps: {:?})", cfg.name, path.display(), report.inherited);
    }
    let inherited = |name: &str| report.inherited.iter().any(|n| n == name);

    let mut chosen = Vec::new();
    for wq in model.weight_quantizers() {
        if inherited(wq.layer) {
            continue;
        }
        let (steps, warnings) = weight_steps(cfg.init_method, wq.weight, &wq.quant.spec, wq.quant.bits)?;
        report.warnings.extend(warnings.into_iter().map(|w| format!("{}: {w}", wq.layer)));
        chosen.push((wq.layer.to_string(), steps));
    }
    for (name, steps) in &chosen {
        model.set_step_size(name, steps)?;
    }

    let pending: Vec<String> =
        model.activation_quantizers().iter().map(|a| a.name.clone()).filter(|n| !inherited(n)).collect();
    if !pending.is_empty() {
        if !matches!(cfg.init_method, InitMethod::Constant { .. }) {
            report.calibration_batches = calibrate(model, train, cfg.batch_size, cfg.stat_batches)?;
        }
        let mut act_steps = Vec::new();
        for a in model.activation_quantizers() {
            if pending.contains(&a.name) {
                let (step, warnings) = activation_step(cfg.init_method, &a.observer, a.spec.levels, a.bits)?;
                report.warnings.extend(warnings.into_iter().map(|w| format!("{}: {w}", a.name)));
                act_steps.push((a.name.clone(), step));
            }
        }
        for (name, step) in act_steps {
            model.set_step_size(&name, &[step])?;
            chosen.push((name, vec![step]));
        }
    }
    for w in &report.warnings {
        warn!("{}: {w}", cfg.name);
    }
    report.steps = chosen.into_iter().collect();
    Ok(report)
}

/// Forwards up to `batches` training batches with activation quantizers observing.
/// Returns the number of batches seen; all non-step tensors are restored afterwards.
pub fn calibrate(model: &mut Model<f32>, train: &Dataset, batch_size: usize, batches: usize) -> Result<usize> {
    if batches == 0 {
        return Err(Error::Config("stat_batches must be positive".into()));
    }
    let saved = model.named_tensors();
    for a in model.activation_quantizers() {
        a.observer = ActivationScaleEstimator::new();
    }
    model.set_activation_state(ActState::Observe);
    let mut seen = 0;
    let result = (|| {
        for (x, _) in train.sequential_batches(batch_size).take(batches) {
            model.forward(&x, Phase::Train)?;
            seen += 1;
        }
        Ok::<_, Error>(())
    })();
    model.set_activation_state(ActState::Quantize);
    for (name, shape, data) in &saved {
        model.load_tensor(name, shape, data)?;
    }
    result?;
    Ok(seen)
}
