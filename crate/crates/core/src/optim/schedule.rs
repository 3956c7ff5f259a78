use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    /// Constant `warmup_lr` for `warmup_epochs`, then a jump to `base_lr` and cosine decay.
    WarmupThenCosine,
}

/// Per-epoch learning-rate schedule (constant within an epoch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    #[serde(default)]
    pub warmup_lr: f64,
    #[serde(default)]
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl Schedule {
    pub fn cosine(base_lr: f64, total_epochs: usize) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            base_lr,
            warmup_lr: 0.0,
            warmup_epochs: 0,
            total_epochs,
        }
    }

    pub fn warmup_then_cosine(
        warmup_lr: f64,
        warmup_epochs: usize,
        base_lr: f64,
        total_epochs: usize,
    ) -> Self {
        Self {
            kind: ScheduleKind::WarmupThenCosine,
            base_lr,
            warmup_lr,
            warmup_epochs,
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!(
                "base learning rate must be positive, got {}",
                self.base_lr
            )));
        }
        if self.kind == ScheduleKind::WarmupThenCosine {
            if !(self.warmup_lr > 0.0) {
                return Err(Error::Config(format!(
                    "warm-up learning rate must be positive, got {}",
                    self.warmup_lr
                )));
            }
            if self.warmup_epochs >= self.total_epochs && self.total_epochs > 0 {
                return Err(Error::Config(format!(
                    "warm-up ({} epochs) must be shorter than training ({} epochs)",
                    self.warmup_epochs, self.total_epochs
                )));
            }
        }
        Ok(())
    }

    /// Learning rate for `epoch`; `_step_in_epoch` is accepted for per-step schedules but unused.
    pub fn lr_at(&self, epoch: usize, _step_in_epoch: usize) -> Result<f64> {
        self.validate()?;
        if epoch >= self.total_epochs {
            return Err(Error::Config(format!(
                "epoch {epoch} is outside a {}-epoch schedule",
                self.total_epochs
            )));
        }
        let cosine = |e: usize, span: usize| {
            self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * e as f64 / span as f64).cos())
        };
        Ok(match self.kind {
            ScheduleKind::Cosine => cosine(epoch, self.total_epochs),
            ScheduleKind::WarmupThenCosine if epoch < self.warmup_epochs => self.warmup_lr,
            ScheduleKind::WarmupThenCosine => cosine(
                epoch - self.warmup_epochs,
                self.total_epochs - self.warmup_epochs,
            ),
        })
    }
}
