//! Per-quantizer training-dynamics records and their CSV form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sqnr::empirical_sqnr;
use crate::error::{Error, Result};
use crate::nn::{Model, Phase};
use crate::real::Real;
use crate::tensor::{mean_std, Tensor};

pub const CSV_HEADER: &str = "layer,epoch,delta,input_std,sqnr_db";

/// One snapshot of a quantizer.
///
/// `delta` is the mean over step groups; `input_std` is the sample std for weights and
/// `sqrt(2 mean(x^2))` for activations; `sqnr_db` is NaN when the input has no energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRecord {
    pub layer: String,
    pub epoch: f64,
    pub delta: f64,
    pub input_std: f64,
    pub sqnr_db: f64,
}

/// Records of one run, kept strictly time-ordered per layer.
#[derive(Debug, Clone, Default)]
pub struct DynamicsLog {
    rows: BTreeMap<String, Vec<DynamicsRecord>>,
}

impl DynamicsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rec: DynamicsRecord) -> Result<()> {
        let rows = self.rows.entry(rec.layer.clone()).or_default();
        if let Some(last) = rows.last() {
            if !(rec.epoch > last.epoch) {
                return Err(Error::State(format!(
                    "{}: record at epoch {} does not follow {}",
                    rec.layer, rec.epoch, last.epoch
                )));
            }
        }
        rows.push(rec);
        Ok(())
    }

    pub fn extend(&mut self, recs: impl IntoIterator<Item = DynamicsRecord>) -> Result<()> {
        recs.into_iter().try_for_each(|r| self.push(r))
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layer(&self, name: &str) -> &[DynamicsRecord] {
        self.rows.get(name).map_or(&[], Vec::as_slice)
    }

    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    /// All rows ordered by layer name, then time.
    pub fn iter(&self) -> impl Iterator<Item = &DynamicsRecord> {
        self.rows.values().flatten()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in self.iter() {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.layer, r.epoch, r.delta, r.input_std, r.sqnr_db
            )
            .unwrap();
        }
        s
    }

    pub fn emit_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Snapshots every quantizer of `model` after an eval-mode forward pass on `batch`.
///
/// Full-precision layers have no quantizer and produce no record.
pub fn record_dynamics<T: Real>(
    model: &mut Model<T>,
    epoch: f64,
    batch: &Tensor<T>,
) -> Result<Vec<DynamicsRecord>> {
    model.forward(batch, Phase::Eval)?;
    let mean_delta = |d: &[T]| d.iter().map(|v| v.as_f64()).sum::<f64>() / d.len() as f64;
    let mut out = Vec::new();
    for wq in model.weight_quantizers() {
        out.push(DynamicsRecord {
            layer: wq.layer.to_string(),
            epoch,
            delta: mean_delta(&wq.quant.step.delta),
            input_std: mean_std(wq.weight.data()).1,
            sqnr_db: empirical_sqnr(wq.weight, &wq.quant.step, &wq.quant.spec)?,
        });
    }
    for a in model.activation_quantizers() {
        let x = a.last_input().expect("forward just ran");
        let energy = x.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / x.len() as f64;
        out.push(DynamicsRecord {
            layer: a.name.clone(),
            epoch,
            delta: mean_delta(&a.step.delta),
            input_std: (2.0 * energy).sqrt(),
            sqnr_db: empirical_sqnr(x, &a.step, &a.spec)?,
        });
    }
    Ok(out)
}

/// Writes a gnuplot script next to `csv` that plots step size, input std and SQNR per layer.
pub fn write_gnuplot_script(csv: &Path, log: &DynamicsLog) -> Result<PathBuf> {
    let path = csv.with_extension("gp");
    let data = csv
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut s = String::new();
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set key autotitle columnhead outside").unwrap();
    writeln!(s, "set xlabel 'epoch'").unwrap();
    writeln!(s, "set multiplot layout 3,1").unwrap();
    for (col, label) in [(3, "delta"), (4, "input std"), (5, "SQNR [dB]")] {
        writeln!(s, "set ylabel '{label}'").unwrap();
        let plots: Vec<String> = log
            .layers()
            .map(|l| {
                format!(
                    "'{data}' using 2:(strcol(1) eq '{l}' ? ${col} : NaN) with lines title '{l}'"
                )
            })
            .collect();
        if plots.is_empty() {
            writeln!(s, "plot NaN notitle").unwrap();
        } else {
            writeln!(s, "plot {}", plots.join(", \\\n     ")).unwrap();
        }
    }
    writeln!(s, "unset multiplot").unwrap();
    std::fs::write(&path, s)?;
    Ok(path)
}
