use crate::error::{Error, Result};
use crate::mse::{quantizer_mse, InputDistribution};
use crate::quant::{activation_scalar, weight_scalar, QuantMode};

/// Inclusive scan grid `lo, lo + step, ..., <= hi`.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let count = if self.hi > self.lo {
            ((self.hi - self.lo) / self.step + 1e-9).floor() as usize
        } else {
            0
        };
        (0..=count).map(move |i| self.lo + i as f64 * self.step)
    }
}

/// What a grid search minimizes.
pub enum GridObjective<'a> {
    /// Quadrature MSE under a unit distribution.
    Analytic(InputDistribution),
    /// Monte-Carlo MSE over samples.
    Samples(&'a [f64]),
}

/// Step size on `grid` with the smallest MSE. Test oracle; never used for initialization.
pub fn grid_search_step(
    mode: QuantMode,
    levels: u32,
    objective: GridObjective<'_>,
    grid: Grid,
) -> Result<f64> {
    if !(grid.step > 0.0) || grid.hi < grid.lo || !(grid.lo > 0.0) {
        return Err(Error::InvalidParameter(format!("bad grid {grid:?}")));
    }
    let mut best = (f64::INFINITY, grid.lo);
    for delta in grid.points() {
        let mse = match &objective {
            GridObjective::Analytic(dist) => quantizer_mse(delta, levels, mode, dist)?,
            GridObjective::Samples(xs) => {
                let q = |x: f64| match mode {
                    QuantMode::Weight => weight_scalar(x, delta, levels),
                    QuantMode::Activation => activation_scalar(x, delta, levels),
                };
                xs.iter().map(|&x| (x - q(x)).powi(2)).sum::<f64>() / xs.len() as f64
            }
        };
        if mse < best.0 {
            best = (mse, delta);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_grid() {
        let g = Grid {
            lo: 0.7,
            hi: 0.7,
            step: 1e-3,
        };
        let d = grid_search_step(
            QuantMode::Weight,
            4,
            GridObjective::Analytic(InputDistribution::StdGaussian),
            g,
        );
        assert_eq!(d.unwrap(), 0.7);
    }

    #[test]
    fn grid_is_inclusive() {
        let g = Grid {
            lo: 1.0,
            hi: 2.0,
            step: 0.25,
        };
        assert_eq!(
            g.points().collect::<Vec<_>>(),
            vec![1.0, 1.25, 1.5, 1.75, 2.0]
        );
    }
}
