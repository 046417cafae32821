//! Error type shared by every layer of the simulator.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// The wall bump reached the channel half-height.
    #[error(
        "domain collapse: max wall height reduction {max_height} >= half-height {half_height}"
    )]
    DomainCollapse { max_height: f64, half_height: f64 },

    #[error("singular matrix: pivot {pivot:e} at column {column}")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("Picard iteration did not converge in {iterations} iterations (last increment {increment:e})")]
    NonlinearDivergence { iterations: usize, increment: f64 },

    #[error("periodicity not reached: residual {residual:e} after {max_cycles} cycles")]
    PeriodicityNotReached { residual: f64, max_cycles: usize },

    #[error("mesh connectivity does not match the trajectory's mesh")]
    ConnectivityMismatch,

    #[error("negative concentration {0}")]
    NegativeConcentration(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A micro-step failure inside a period, with the failing step index.
    #[error("micro step {step}: {source}")]
    AtMicroStep {
        step: usize,
        #[source]
        source: Box<SimError>,
    },

    /// A failure inside the macro loop, with the failing macro-step index.
    #[error("macro step {step}: {source}")]
    AtMacroStep {
        step: usize,
        #[source]
        source: Box<SimError>,
    },

    #[error("study cell {cell}: {source}")]
    AtStudyCell {
        cell: String,
        #[source]
        source: Box<SimError>,
    },

    #[error("I/O error: {0}")]
    Io(String),
}

impl SimError {
    pub fn at_micro_step(self, step: usize) -> Self {
        SimError::AtMicroStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn at_macro_step(self, step: usize) -> Self {
        SimError::AtMacroStep {
            step,
            source: Box::new(self),
        }
    }

    /// Innermost error with all location wrappers removed.
    pub fn root(&self) -> &SimError {
        match self {
            SimError::AtMicroStep { source, .. }
            | SimError::AtMacroStep { source, .. }
            | SimError::AtStudyCell { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
