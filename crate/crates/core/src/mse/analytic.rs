use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::distribution::{Density, InputDistribution};
use super::quadrature::integrate;
use crate::error::{Error, Result};
use crate::quant::QuantMode;

/// Absolute tolerance of every cell integral.
pub const QUAD_TOL: f64 = 1e-10;
/// Bisection bracket and tolerance of [`solve_unit_step`].
pub const BRACKET: (f64, f64) = (1e-3, 10.0);
pub const SOLVE_TOL: f64 = 1e-7;

fn check_args(delta: f64, levels: u32) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive, got {delta}"
        )));
    }
    if levels < 2 || levels % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "level count must be even and >= 2, got {levels}"
        )));
    }
    Ok(())
}

/// Reconstruction level `j` and its cell `[lo, hi]` before intersecting with the support.
fn cell(mode: QuantMode, j: u32, delta: f64, levels: u32) -> (f64, f64, f64) {
    let last = levels - 1;
    let (level, lo, hi) = match mode {
        QuantMode::Weight => {
            let alpha = delta * (levels as f64 - 1.0) / 2.0;
            let level = j as f64 * delta - alpha;
            (level, level - 0.5 * delta, level + 0.5 * delta)
        }
        QuantMode::Activation => {
            let level = j as f64 * delta;
            (level, level - 0.5 * delta, level + 0.5 * delta)
        }
    };
    let lo = if j == 0 { f64::NEG_INFINITY } else { lo };
    let hi = if j == last { f64::INFINITY } else { hi };
    (level, lo, hi)
}

/// Sum over reconstruction cells of `∫ g(x, level) p(x) dx`, restricted to the support.
fn sum_cells(
    mode: QuantMode,
    delta: f64,
    levels: u32,
    dist: &impl Density,
    g: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    let (s_lo, s_hi) = dist.support();
    let mut total = 0.0;
    for j in 0..levels {
        let (level, lo, hi) = cell(mode, j, delta, levels);
        let (a, b) = (lo.max(s_lo), hi.min(s_hi));
        if a < b {
            total += integrate(|x| g(x, level) * dist.pdf(x), a, b, QUAD_TOL)?;
        }
    }
    Ok(total)
}

/// Expected squared error `E[(x - Q(x; delta))^2]` of either quantizer under `dist`.
pub fn quantizer_mse(delta: f64, levels: u32, mode: QuantMode, dist: &impl Density) -> Result<f64> {
    check_args(delta, levels)?;
    sum_cells(mode, delta, levels, dist, |x, level| (x - level).powi(2))
}

/// Expected squared error of the symmetric weight quantizer.
pub fn weight_mse(delta: f64, levels: u32, dist: &impl Density) -> Result<f64> {
    quantizer_mse(delta, levels, QuantMode::Weight, dist)
}

/// Expected squared error of the activation quantizer.
pub fn activation_mse(delta: f64, levels: u32, dist: &impl Density) -> Result<f64> {
    quantizer_mse(delta, levels, QuantMode::Activation, dist)
}

/// `dD_w / d delta` for a symmetric density, folded onto the positive half-line:
///
/// `-Σ_{i=1}^{N/2-1} (2i-1) ∫_{(i-1)Δ}^{iΔ} 2(x - (2i-1)Δ/2) p(x) dx
///  - (N-1) ∫_{(N/2-1)Δ}^{∞} 2(x - (N-1)Δ/2) p(x) dx`.
///
/// The boundary terms of the Leibniz rule cancel because the integrand is continuous
/// across decision levels.
pub fn weight_mse_derivative(delta: f64, levels: u32, dist: &impl Density) -> Result<f64> {
    check_args(delta, levels)?;
    if !dist.is_symmetric() {
        return Err(Error::InvalidParameter(
            "the folded weight derivative needs a density symmetric about zero".into(),
        ));
    }
    let (_, s_hi) = dist.support();
    let half = levels / 2;
    let mut total = 0.0;
    for i in 1..half {
        let k = (2 * i - 1) as f64;
        let c = 0.5 * k * delta;
        let (a, b) = ((i - 1) as f64 * delta, (i as f64 * delta).min(s_hi));
        if a < b {
            total -= k * integrate(|x| 2.0 * (x - c) * dist.pdf(x), a, b, QUAD_TOL)?;
        }
    }
    let k = levels as f64 - 1.0;
    let c = 0.5 * k * delta;
    let a = (half - 1) as f64 * delta;
    if a < s_hi {
        total -= k * integrate(|x| 2.0 * (x - c) * dist.pdf(x), a, s_hi, QUAD_TOL)?;
    }
    Ok(total)
}

/// `dD_a / d delta`: each level `kΔ` moves at rate `k`, giving `Σ_k -2k ∫_cell (x - kΔ) p(x) dx`.
pub fn activation_mse_derivative(delta: f64, levels: u32, dist: &impl Density) -> Result<f64> {
    check_args(delta, levels)?;
    sum_cells(QuantMode::Activation, delta, levels, dist, |x, level| {
        -2.0 * (level / delta) * (x - level)
    })
}

/// MSE derivative of the mode's quantizer under its unit distribution.
pub fn mse_derivative(delta: f64, levels: u32, mode: QuantMode) -> Result<f64> {
    let dist = InputDistribution::for_mode(mode);
    match mode {
        QuantMode::Weight => weight_mse_derivative(delta, levels, &dist),
        QuantMode::Activation => activation_mse_derivative(delta, levels, &dist),
    }
}

/// MSE-optimal step size for a unit-scale input, by bisection on the MSE derivative.
///
/// Weights assume a standard Gaussian, activations the positive half of a rectified one.
pub fn solve_unit_step(mode: QuantMode, levels: u32) -> Result<f64> {
    let (mut lo, mut hi) = BRACKET;
    let f_lo = mse_derivative(lo, levels, mode)?;
    let f_hi = mse_derivative(hi, levels, mode)?;
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::Solver(format!(
            "no sign change of dD/dΔ on [{lo}, {hi}] for {mode:?}, N = {levels} ({f_lo:e}, {f_hi:e})"
        )));
    }
    while hi - lo > SOLVE_TOL {
        let mid = 0.5 * (lo + hi);
        if mse_derivative(mid, levels, mode)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

static UNIT_STEPS: Mutex<BTreeMap<(QuantMode, u32), f64>> = Mutex::new(BTreeMap::new());

/// Cached [`solve_unit_step`].
pub fn unit_step(mode: QuantMode, levels: u32) -> Result<f64> {
    if let Some(&v) = UNIT_STEPS
        .lock()
        .expect("unit step cache")
        .get(&(mode, levels))
    {
        return Ok(v);
    }
    let v = solve_unit_step(mode, levels)?;
    UNIT_STEPS
        .lock()
        .expect("unit step cache")
        .insert((mode, levels), v);
    Ok(v)
}

/// Analytic SQNR in dB of the mode's quantizer at step `delta` under its unit distribution.
///
/// Returns `f64::INFINITY` when the MSE is exactly zero.
pub fn sqnr_db(delta: f64, levels: u32, mode: QuantMode) -> Result<f64> {
    let dist = InputDistribution::for_mode(mode);
    let mse = quantizer_mse(delta, levels, mode, &dist)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (dist.sqnr_signal_power() / mse).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitStepEntry {
    pub mode: QuantMode,
    #[serde(rename = "N")]
    pub levels: u32,
    pub delta_unit: f64,
    pub sqnr_db: f64,
}

/// Pre-computed unit step sizes and optimal SQNR, per mode and level count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitStepTable {
    pub entries: Vec<UnitStepEntry>,
}

impl UnitStepTable {
    pub const DEFAULT_LEVELS: [u32; 4] = [2, 4, 8, 16];

    pub fn compute(levels: &[u32]) -> Result<Self> {
        let mut entries = Vec::new();
        for mode in [QuantMode::Weight, QuantMode::Activation] {
            for &n in levels {
                let delta_unit = unit_step(mode, n)?;
                entries.push(UnitStepEntry {
                    mode,
                    levels: n,
                    delta_unit,
                    sqnr_db: sqnr_db(delta_unit, n, mode)?,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, mode: QuantMode, levels: u32) -> Option<&UnitStepEntry> {
        self.entries
            .iter()
            .find(|e| e.mode == mode && e.levels == levels)
    }

    /// JSON array of `{mode, N, delta_unit, sqnr_db}` rows.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("table serializes")
    }

    /// Fixed-width text table with one row per level count.
    pub fn render(&self) -> String {
        let mut out = String::from("   N |  delta_w  SQNR_w(dB) |  delta_a  SQNR_a(dB)\n");
        out.push_str("-----+----------------------+---------------------\n");
        let mut levels: Vec<u32> = self.entries.iter().map(|e| e.levels).collect();
        levels.dedup();
        levels.sort_unstable();
        levels.dedup();
        for n in levels {
            let w = self.get(QuantMode::Weight, n);
            let a = self.get(QuantMode::Activation, n);
            let cellf = |e: Option<&UnitStepEntry>| match e {
                Some(e) => format!("{:8.4} {:11.2}", e.delta_unit, e.sqnr_db),
                None => format!("{:>8} {:>11}", "-", "-"),
            };
            out.push_str(&format!("{n:4} | {} | {}\n", cellf(w), cellf(a)));
        }
        out
    }
}
