use serde::{Deserialize, Serialize};

use super::param::{group_of, ParamGroup, ParamKind, Parameters};
use crate::error::{Error, Result};
use crate::quant::STEP_EPS;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        Self::Sgd {
            momentum: default_momentum(),
        }
    }

    pub fn adam() -> Self {
        Self::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

/// SGD with momentum or Adam over grouped parameters.
///
/// Weight decay is coupled (added to the gradient) and skipped for step-size groups;
/// step sizes are clamped to `>= STEP_EPS` after every update.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    groups: Vec<ParamGroup>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, groups: Vec<ParamGroup>) -> Result<Self> {
        match kind {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(Error::Config(format!(
                    "momentum must be in [0, 1), got {momentum}"
                )))
            }
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                return Err(Error::Config(format!(
                    "bad Adam hyperparameters ({beta1}, {beta2}, {eps})"
                )))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            groups,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update with learning rate `lr` (scaled per group).
    pub fn step(&mut self, params: &mut dyn Parameters<T>, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let kind = self.kind;
        let groups = &self.groups;
        let first = &mut self.first;
        let second = &mut self.second;
        let mut index = 0usize;
        let mut failure = None;
        params.visit_params(&mut |slot| {
            if failure.is_some() {
                return;
            }
            let group = match group_of(groups, slot.kind) {
                Ok(g) => g,
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            };
            if first.len() <= index {
                first.push(vec![T::zero(); slot.value.len()]);
                second.push(Vec::new());
            }
            if first[index].len() != slot.value.len() {
                failure = Some(Error::State(format!(
                    "parameter {index} changed size between steps"
                )));
                return;
            }
            let decay = if group.is_step_size {
                T::zero()
            } else {
                T::lit(group.weight_decay)
            };
            let rate = T::lit(lr * group.lr_scale);
            match kind {
                OptimizerKind::Sgd { momentum } => {
                    let mu = T::lit(momentum);
                    let buf = &mut first[index];
                    for ((p, &g), b) in slot.value.iter_mut().zip(slot.grad).zip(buf.iter_mut()) {
                        let g = g + decay * *p;
                        *b = if t == 1 { g } else { mu * *b + g };
                        *p -= rate * *b;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    if second[index].is_empty() {
                        second[index] = vec![T::zero(); slot.value.len()];
                    }
                    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                    let c1 = T::lit(1.0 - beta1.powi(t));
                    let c2 = T::lit(1.0 - beta2.powi(t));
                    let eps = T::lit(eps);
                    let (m, v) = (&mut first[index], &mut second[index]);
                    for (((p, &g), m), v) in slot
                        .value
                        .iter_mut()
                        .zip(slot.grad)
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let g = g + decay * *p;
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= rate * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            if slot.kind == ParamKind::StepSize {
                let floor = T::lit(STEP_EPS);
                slot.value.iter_mut().for_each(|d| {
                    if !(*d >= floor) {
                        *d = floor;
                    }
                });
            }
            index += 1;
        });
        failure.map_or(Ok(()), Err)
    }
}

/// Default weight decay per bit-width; full precision (and wider than 4 bits) uses `1e-4`.
pub fn weight_decay_for_bits(bits: u32) -> f64 {
    match bits {
        1 => 0.0,
        2 => 0.25e-4,
        3 => 0.5e-4,
        _ => 1e-4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::param::{default_groups, ParamStore};

    fn store(kind: ParamKind, p: f64, g: f64) -> ParamStore<f64> {
        ParamStore {
            params: vec![(kind, vec![p], vec![g])],
        }
    }

    #[test]
    fn vanilla_sgd_step() {
        let mut s = store(ParamKind::Weight, 1.0, 0.5);
        let mut opt = Optimizer::new(
            OptimizerKind::Sgd { momentum: 0.0 },
            default_groups(0.0).unwrap(),
        )
        .unwrap();
        opt.step(&mut s, 0.1).unwrap();
        assert!((s.params[0].1[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        let mut s = store(ParamKind::Weight, 0.0, 1.0);
        let mut opt = Optimizer::new(
            OptimizerKind::Sgd { momentum: 0.9 },
            default_groups(0.0).unwrap(),
        )
        .unwrap();
        opt.step(&mut s, 0.1).unwrap();
        opt.step(&mut s, 0.1).unwrap();
        assert!((s.params[0].1[0] + 0.1 * (1.0 + 1.9)).abs() < 1e-12);
    }

    #[test]
    fn decay_skips_step_sizes() {
        let run = |decay: f64| {
            let mut s = store(ParamKind::StepSize, 0.3, 0.2);
            let mut opt =
                Optimizer::new(OptimizerKind::sgd(), default_groups(decay).unwrap()).unwrap();
            for _ in 0..5 {
                opt.step(&mut s, 0.01).unwrap();
            }
            s.params[0].1[0]
        };
        assert_eq!(run(1e-4).to_bits(), run(0.0).to_bits());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [1e-3, -2.0, 40.0] {
            let mut s = store(ParamKind::Weight, 1.0, g);
            let mut opt =
                Optimizer::new(OptimizerKind::adam(), default_groups(0.0).unwrap()).unwrap();
            opt.step(&mut s, 0.01).unwrap();
            assert!(
                ((s.params[0].1[0] - 1.0).abs() - 0.01).abs() < 1e-6,
                "g = {g}"
            );
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut s = store(ParamKind::Weight, 1.25, 0.0);
        let mut opt = Optimizer::new(OptimizerKind::adam(), default_groups(0.0).unwrap()).unwrap();
        for _ in 0..10 {
            opt.step(&mut s, 0.01).unwrap();
        }
        assert_eq!(s.params[0].1[0], 1.25);
    }

    #[test]
    fn step_sizes_are_clamped() {
        let mut s = store(ParamKind::StepSize, 1e-3, 10.0);
        let mut opt = Optimizer::new(
            OptimizerKind::Sgd { momentum: 0.0 },
            default_groups(0.0).unwrap(),
        )
        .unwrap();
        opt.step(&mut s, 1.0).unwrap();
        assert_eq!(s.params[0].1[0], STEP_EPS);
    }

    #[test]
    fn negative_lr_rejected() {
        let mut s = store(ParamKind::Weight, 1.0, 1.0);
        let mut opt = Optimizer::new(OptimizerKind::sgd(), default_groups(0.0).unwrap()).unwrap();
        assert!(matches!(opt.step(&mut s, -0.1), Err(Error::Config(_))));
    }

    #[test]
    fn decay_table() {
        assert_eq!(weight_decay_for_bits(4), 1e-4);
        assert_eq!(weight_decay_for_bits(3), 0.5e-4);
        assert_eq!(weight_decay_for_bits(2), 0.25e-4);
        assert_eq!(weight_decay_for_bits(1), 0.0);
        assert_eq!(weight_decay_for_bits(32), 1e-4);
    }
}
