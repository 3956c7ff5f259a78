//! Cross-product ablation suites with median-over-seeds summaries.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use uniq::nn::Precision;
use uniq::optim::OptimizerKind;
use uniq::{Error, Result};

use crate::config::{ExperimentConfig, InitMethod, ScheduleConfig};
use crate::data::load_dataset;
use crate::train::{train_on, RunResult};

pub const MIN_SEEDS: usize = 3;

/// Axes left empty keep the base config's value; at least one axis must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSuite {
    pub name: String,
    pub base: ExperimentConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub init_methods: Vec<InitMethod>,
    /// Uniform `WbAb` bit-widths.
    #[serde(default)]
    pub bits: Vec<Precision>,
    #[serde(default)]
    pub optimizers: Vec<OptimizerKind>,
    #[serde(default)]
    pub schedules: Vec<ScheduleConfig>,
    /// Parent checkpoint path per run; `{seed}` is replaced by the run's seed.
    #[serde(default)]
    pub init_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub init_method: InitMethod,
    pub bits_w: Precision,
    pub bits_a: Precision,
    pub optimizer: OptimizerKind,
    pub schedule: ScheduleConfig,
    pub seeds: Vec<u64>,
    pub test_accs: Vec<f64>,
    pub median_test_acc: f64,
    pub median_init_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub suite: String,
    pub rows: Vec<AblationRow>,
    pub csv: Option<PathBuf>,
    #[serde(skip)]
    pub runs: Vec<Vec<RunResult>>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn optimizer_label(o: &OptimizerKind) -> String {
    match o {
        OptimizerKind::Sgd { momentum } => format!("sgd(momentum={momentum})"),
        OptimizerKind::Adam { beta1, beta2, .. } => format!("adam({beta1},{beta2})"),
    }
}

impl AblationSuite {
    pub fn validate(&self) -> Result<()> {
        if self.init_methods.is_empty() && self.bits.is_empty() && self.optimizers.is_empty() && self.schedules.is_empty() {
            return Err(Error::Config(format!("suite '{}' has no ablation axis", self.name)));
        }
        if self.seeds.len() < MIN_SEEDS {
            return Err(Error::Config(format!("suite '{}' needs at least {MIN_SEEDS} seeds", self.name)));
        }
        Ok(())
    }

    /// Cell configs in row order (init method, then bits, optimizer, schedule), without seeds applied.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        fn axis<T: Clone>(v: &[T], base: T) -> Vec<T> {
            if v.is_empty() {
                vec![base]
            } else {
                v.to_vec()
            }
        }
        let b = &self.base;
        let mut out = Vec::new();
        for init in axis(&self.init_methods, b.init_method) {
            for bits in axis(&self.bits, b.bits_w) {
                for opt in axis(&self.optimizers, b.optimizer) {
                    for sched in axis(&self.schedules, b.schedule) {
                        let mut c = b.clone();
                        c.init_method = init;
                        if !self.bits.is_empty() {
                            c.bits_w = bits;
                            c.bits_a = bits;
                        }
                        c.optimizer = opt;
                        c.schedule = sched;
                        out.push(c);
                    }
                }
            }
        }
        out
    }

    /// Trains every cell for every seed, sequentially and in row order.
    pub fn run(&self) -> Result<AblationTable> {
        self.validate()?;
        let cells = self.cells();
        let (train, test) = load_dataset(&self.base.dataset, &self.base.arch_spec().input)?;
        let out_dir = self.base.output_dir.join(&self.name);
        let mut rows = Vec::new();
        let mut runs = Vec::new();
        for (i, cell) in cells.iter().enumerate() {
            let mut results = Vec::new();
            for &seed in &self.seeds {
                let mut cfg = cell.clone();
                cfg.seed = seed;
                cfg.name = format!("{}_{i}_s{seed}", self.name);
                cfg.output_dir = out_dir.clone();
                if let Some(t) = &self.init_from {
                    cfg.init_from = Some(PathBuf::from(t.replace("{seed}", &seed.to_string())));
                }
                results.push(train_on(&cfg, &train, &test)?.0);
            }
            let accs: Vec<f64> = results.iter().map(|r| r.final_test_acc).collect();
            let inits: Vec<f64> = results.iter().map(|r| r.init_test_acc).collect();
            rows.push(AblationRow {
                init_method: cell.init_method,
                bits_w: cell.bits_w,
                bits_a: cell.bits_a,
                optimizer: cell.optimizer,
                schedule: cell.schedule,
                seeds: self.seeds.clone(),
                median_test_acc: median(&accs),
                median_init_acc: median(&inits),
                test_accs: accs,
            });
            runs.push(results);
        }
        let mut table = AblationTable { suite: self.name.clone(), rows, csv: None, runs };
        std::fs::create_dir_all(&out_dir)?;
        let csv = out_dir.join("summary.csv");
        std::fs::write(&csv, table.to_csv())?;
        table.csv = Some(csv);
        Ok(table)
    }
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("init_method,bits_w,bits_a,optimizer,schedule,median_test_acc,median_init_acc,test_accs\n");
        for r in &self.rows {
            let accs: Vec<String> = r.test_accs.iter().map(f64::to_string).collect();
            writeln!(
                s,
                "{},{},{},\"{}\",\"{}\",{},{},{}",
                r.init_method.label(),
                r.bits_w.bits(),
                r.bits_a.bits(),
                optimizer_label(&r.optimizer),
                r.schedule.label(),
                r.median_test_acc,
                r.median_init_acc,
                accs.join(";")
            )
            .unwrap();
        }
        s
    }
}
