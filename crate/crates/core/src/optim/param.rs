use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    /// BatchNorm scale and shift.
    Norm,
    /// Quantizer step sizes.
    StepSize,
}

/// One parameter tensor as seen by an optimizer.
pub struct ParamSlot<'a, T> {
    pub kind: ParamKind,
    pub value: &'a mut [T],
    pub grad: &'a [T],
}

/// Anything that exposes its trainable parameters in a fixed order.
pub trait Parameters<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_, T>));
}

/// Optimizer settings shared by a set of parameter kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub kinds: Vec<ParamKind>,
    pub weight_decay: f64,
    pub lr_scale: f64,
    pub is_step_size: bool,
}

impl ParamGroup {
    pub fn new(name: &str, kinds: &[ParamKind], weight_decay: f64, lr_scale: f64) -> Result<Self> {
        let is_step_size = kinds.contains(&ParamKind::StepSize);
        if is_step_size && kinds.len() != 1 {
            return Err(Error::Config(
                "step sizes must form their own parameter group".into(),
            ));
        }
        if is_step_size && weight_decay != 0.0 {
            return Err(Error::Config(
                "step-size groups cannot use weight decay".into(),
            ));
        }
        if !(weight_decay >= 0.0) || !(lr_scale > 0.0) {
            return Err(Error::Config(format!(
                "group {name}: weight decay must be >= 0 and lr scale > 0 (got {weight_decay}, {lr_scale})"
            )));
        }
        Ok(Self {
            name: name.into(),
            kinds: kinds.to_vec(),
            weight_decay,
            lr_scale,
            is_step_size,
        })
    }

    /// Step-size group: never decayed.
    pub fn step_sizes(lr_scale: f64) -> Result<Self> {
        Self::new("step_sizes", &[ParamKind::StepSize], 0.0, lr_scale)
    }
}

/// The usual split: everything else decayed by `weight_decay`, step sizes excluded.
pub fn default_groups(weight_decay: f64) -> Result<Vec<ParamGroup>> {
    Ok(vec![
        ParamGroup::new(
            "weights",
            &[ParamKind::Weight, ParamKind::Bias, ParamKind::Norm],
            weight_decay,
            1.0,
        )?,
        ParamGroup::step_sizes(1.0)?,
    ])
}

pub(crate) fn group_of(groups: &[ParamGroup], kind: ParamKind) -> Result<&ParamGroup> {
    groups
        .iter()
        .find(|g| g.kinds.contains(&kind))
        .ok_or_else(|| Error::Config(format!("no parameter group covers {kind:?}")))
}

/// Plain list of parameters; handy for tests and toy problems.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    pub params: Vec<(ParamKind, Vec<T>, Vec<T>)>,
}

impl<T> Parameters<T> for ParamStore<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamSlot<'_, T>)) {
        for (kind, value, grad) in &mut self.params {
            f(ParamSlot {
                kind: *kind,
                value,
                grad,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_size_groups_refuse_decay() {
        assert!(ParamGroup::new("s", &[ParamKind::StepSize], 1e-4, 1.0).is_err());
        assert!(ParamGroup::new("s", &[ParamKind::StepSize, ParamKind::Weight], 0.0, 1.0).is_err());
        let g = ParamGroup::step_sizes(1.0).unwrap();
        assert!(g.is_step_size);
        assert_eq!(g.weight_decay, 0.0);
    }
}
