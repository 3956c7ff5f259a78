//! The training loop and its outputs.

use std::fmt::Write as _;
use std::path::PathBuf;

use log::info;
use serde::{Deserialize, Serialize};
use uniq::diagnostics::{record_dynamics, write_gnuplot_script, DynamicsLog, DynamicsRecord};
use uniq::nn::checkpoint::Checkpoint;
use uniq::nn::{accuracy, build_model, softmax_cross_entropy, Model, Phase};
use uniq::optim::{default_groups, Optimizer};
use uniq::tensor::mean_std;
use uniq::{Error, Result, Tensor};

use crate::config::ExperimentConfig;
use crate::data::{load_dataset, Dataset};
use crate::init::{initialize, InitReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy over the epoch's training batches, measured as they are trained on.
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub seed: u64,
    /// Test accuracy right after initialization, before any update.
    pub init_test_acc: f64,
    pub epochs: Vec<EpochRecord>,
    pub final_test_acc: f64,
    pub checkpoint: PathBuf,
    pub result_csv: PathBuf,
    pub dynamics_csv: Option<PathBuf>,
    #[serde(skip)]
    pub dynamics: Vec<DynamicsRecord>,
}

impl RunResult {
    /// `epoch,lr,train_loss,train_acc,test_acc`, with the initialization row as epoch 0.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,train_acc,test_acc\n");
        writeln!(s, "0,,,,{}", self.init_test_acc).unwrap();
        for e in &self.epochs {
            writeln!(s, "{},{},{},{},{}", e.epoch, e.lr, e.train_loss, e.train_acc, e.test_acc).unwrap();
        }
        s
    }
}

/// Fraction of `data` classified correctly in eval mode.
pub fn evaluate(model: &mut Model<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0;
    for (x, y) in data.sequential_batches(batch_size) {
        let logits = model.forward(&x, Phase::Eval)?;
        correct += accuracy(&logits, &y)?;
    }
    Ok(correct as f64 / data.len() as f64)
}

fn divergence_snapshot(model: &mut Model<f32>) -> String {
    let mut s = String::from("step sizes and input stds at divergence:\n");
    for wq in model.weight_quantizers() {
        let (_, std) = mean_std(wq.weight.data());
        writeln!(s, "  {}: delta={:?} weight_std={std}", wq.layer, wq.quant.step.delta).unwrap();
    }
    for a in model.activation_quantizers() {
        let std = a.last_input().map(|x| {
            let e = x.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / x.len() as f64;
            (2.0 * e).sqrt()
        });
        writeln!(s, "  {}: delta={:?} input_std={std:?}", a.name, a.step.delta).unwrap();
    }
    s
}

struct Recorder<'a> {
    log: DynamicsLog,
    probe: Tensor<f32>,
    cfg: &'a ExperimentConfig,
    last: Option<f64>,
}

impl Recorder<'_> {
    fn record(&mut self, model: &mut Model<f32>, t: f64) -> Result<()> {
        if !self.cfg.dynamics.enabled || self.last.is_some_and(|l| t <= l) {
            return Ok(());
        }
        let recs = record_dynamics(model, t, &self.probe)?;
        self.log.extend(recs)?;
        self.last = Some(t);
        Ok(())
    }
}

/// Builds, initializes and trains the configured model on already loaded data.
///
/// Writes `<output_dir>/<name>/{result.csv, model.ckpt, dynamics.csv, dynamics.gp}`.
pub fn train_on(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<(RunResult, Model<f32>, InitReport)> {
    cfg.validate()?;
    let arch = cfg.arch_spec();
    let mut model = build_model::<f32>(&arch, &cfg.precision_plan(), cfg.seed)?;
    let report = initialize(&mut model, cfg, train)?;
    let groups = default_groups(cfg.effective_weight_decay())?;
    let mut opt = Optimizer::new(cfg.optimizer, groups)?;
    let schedule = cfg.schedule.build(cfg.epochs);

    let probe_len = cfg.batch_size.min(train.len());
    let probe = train.batch(&(0..probe_len).collect::<Vec<_>>()).0;
    let mut rec = Recorder { log: DynamicsLog::new(), probe, cfg, last: None };
    rec.record(&mut model, 0.0)?;

    let init_test_acc = evaluate(&mut model, test, cfg.batch_size)?;
    info!("{}: test accuracy after init {:.4}", cfg.name, init_test_acc);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch, 0)?;
        let batches = train.shuffled_indices(cfg.batch_size, cfg.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
        let steps = batches.len();
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, idx) in batches.iter().enumerate() {
            let (x, y) = train.batch(idx);
            model.zero_grad();
            let (logits, loss, grad) = match model
                .forward(&x, Phase::Train)
                .and_then(|logits| softmax_cross_entropy(&logits, &y).map(|(l, g)| (logits, l, g)))
            {
                Ok(v) => v,
                Err(Error::NaN(_)) => {
                    return Err(Error::Diverged { epoch, step, snapshot: divergence_snapshot(&mut model) })
                }
                Err(e) => return Err(e),
            };
            correct += accuracy(&logits, &y)?;
            loss_sum += loss * y.len() as f64;
            model.backward(&grad)?;
            opt.step(&mut model, lr)?;
            global_step += 1;
            if epoch < cfg.dynamics.dense_epochs && global_step % cfg.dynamics.every_steps.max(1) == 0 {
                rec.record(&mut model, epoch as f64 + (step + 1) as f64 / steps as f64)?;
            }
        }
        rec.record(&mut model, (epoch + 1) as f64)?;
        let test_acc = evaluate(&mut model, test, cfg.batch_size)?;
        let r = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc,
        };
        info!("{}: epoch {} lr {:.5} loss {:.4} train {:.4} test {:.4}", cfg.name, r.epoch, lr, r.train_loss, r.train_acc, test_acc);
        epochs.push(r);
    }

    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir)?;
    let checkpoint = dir.join("model.ckpt");
    let meta = serde_json::json!({ "config": cfg, "epochs": cfg.epochs });
    Checkpoint::from_model(&model, meta).write(&checkpoint)?;
    let dynamics_csv = if cfg.dynamics.enabled {
        let p = dir.join("dynamics.csv");
        rec.log.emit_csv(&p)?;
        write_gnuplot_script(&p, &rec.log)?;
        Some(p)
    } else {
        None
    };
    let result = RunResult {
        name: cfg.name.clone(),
        seed: cfg.seed,
        init_test_acc,
        final_test_acc: epochs.last().map_or(init_test_acc, |e| e.test_acc),
        epochs,
        checkpoint,
        result_csv: dir.join("result.csv"),
        dynamics_csv,
        dynamics: rec.log.iter().cloned().collect(),
    };
    std::fs::write(&result.result_csv, result.to_csv())?;
    Ok((result, model, report))
}

/// Loads the configured dataset and runs [`train_on`].
pub fn train(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let (train, test) = load_dataset(&cfg.dataset, &cfg.arch_spec().input)?;
    Ok(train_on(cfg, &train, &test)?.0)
}
