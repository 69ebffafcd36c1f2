//! Experiment harness around `smp_core`: synthetic tensor generation, the
//! toy training-stability experiment, micro-benchmarks and the `smp` CLI.

pub mod bench;
pub mod cli;
pub mod generate;
pub mod toytrain;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] smp_core::Error),

    #[error("{0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
