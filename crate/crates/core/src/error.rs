use thiserror::Error;

/// Errors produced by the solver and its analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("grid mismatch: field has {found} cells on half-length {found_l}, expected {expected} cells on half-length {expected_l}")]
    GridMismatch {
        expected: usize,
        found: usize,
        expected_l: f64,
        found_l: f64,
    },

    #[error("non-finite value in species {species} at cell {cell} (t = {t})")]
    NonFinite { species: usize, cell: usize, t: f64 },

    #[error("negative density {value} in cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("time step {dt:e} fell below dt_min = {dt_min:e} at t = {t}")]
    StepTooSmall { dt: f64, dt_min: f64, t: f64 },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("run aborted: {source}; last accepted state written to {}", dump.display())]
    Aborted {
        #[source]
        source: Box<Error>,
        dump: std::path::PathBuf,
    },

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// True for failures raised by the time integrator (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::StepTooSmall { .. } | Error::NegativeDensity { .. } | Error::Aborted { .. }
        )
    }
}

impl Error {
    /// True for rejected input: parameters, configuration, mismatched grids.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Config { .. } | Error::GridMismatch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
