//! Config-driven front end for `multihom-core`: TOML run files, CSV and
//! plot-data artifacts, a caching parallel flux evaluator, and the
//! subcommands of the `multihom` binary.

pub mod benchmarks;
pub mod cache;
pub mod commands;
pub mod config;
pub mod io;
pub mod showcase;

use multihom_core::cell::CellError;
use multihom_core::effective::EffectiveError;
use multihom_core::flux::FluxError;
use multihom_core::macro_solver::MacroError;
use multihom_core::scale::ScaleError;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const ASSERTION: u8 = 1;
    pub const NOT_SEPARATED: u8 = 2;
    pub const INDETERMINATE: u8 = 3;
    pub const CONFIG: u8 = 64;
    pub const NUMERIC: u8 = 70;
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Assertion(String),
    #[error("{0}")]
    NotSeparated(String),
    #[error("{0}")]
    Indeterminate(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => exit::CONFIG,
            Failure::Assertion(_) => exit::ASSERTION,
            Failure::NotSeparated(_) => exit::NOT_SEPARATED,
            Failure::Indeterminate(_) => exit::INDETERMINATE,
            Failure::Numeric(_) | Failure::Io(_) => exit::NUMERIC,
        }
    }
}

impl From<ScaleError> for Failure {
    fn from(e: ScaleError) -> Self {
        match e {
            ScaleError::Expr(e) => Failure::Config(e.to_string()),
            ScaleError::NotJointlySeparated(j) => Failure::NotSeparated(format!(
                "scale lists are not jointly well-separated (spatial well-separated: {}, temporal: {}, merged: {})",
                j.spatial.well_separated, j.temporal.well_separated, j.joint.well_separated
            )),
            other => Failure::Indeterminate(other.to_string()),
        }
    }
}

impl From<FluxError> for Failure {
    fn from(e: FluxError) -> Self {
        match e {
            FluxError::StructureViolation { .. } => Failure::Assertion(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<CellError> for Failure {
    fn from(e: CellError) -> Self {
        match e {
            CellError::Invalid(m) => Failure::Config(m),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

impl From<EffectiveError> for Failure {
    fn from(e: EffectiveError) -> Self {
        match e {
            EffectiveError::Cell(c) => c.into(),
            EffectiveError::Invalid(m) => Failure::Config(m),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

impl From<MacroError> for Failure {
    fn from(e: MacroError) -> Self {
        match e {
            MacroError::Flux(f) => f.into(),
            MacroError::Material(f) => f.into(),
            MacroError::Invalid(m) => Failure::Config(m),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.into())
    }
}

pub use config::{Prepared, RunConfig};
