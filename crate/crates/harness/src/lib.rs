//! Experiment harness: configs, datasets, initialization, training, ablations.

pub mod ablation;
pub mod config;
pub mod data;
pub mod init;
pub mod train;

pub use ablation::{median, AblationSuite, AblationTable};
pub use config::{Arch, DatasetConfig, ExperimentConfig, InitMethod, ScheduleConfig};
pub use train::{evaluate, train, train_on, RunResult};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
