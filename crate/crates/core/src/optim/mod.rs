//! Optimizers, parameter groups, and learning-rate schedules.

mod optimizer;
mod param;
mod schedule;

pub use optimizer::{weight_decay_for_bits, Optimizer, OptimizerKind};
pub use param::{default_groups, ParamGroup, ParamKind, ParamSlot, ParamStore, Parameters};
pub use schedule::{Schedule, ScheduleKind};
