//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The active design matrix is rank deficient; the listed dataset column
    /// indices could not be pivoted.
    #[error("degenerate design: columns {columns:?} are collinear or constant")]
    DegenerateDesign { columns: Vec<usize> },

    #[error("too few observations: n = {n} < p = {p}")]
    TooFewObservations { n: usize, p: usize },

    /// Coefficients diverged during iteration (complete separation or an
    /// unbounded likelihood).
    #[error("non-finite iterate: {detail}")]
    NonFiniteIterate { detail: String },

    #[error("candidate lattice too large: 2^{candidates} submodels exceeds the cap of 2^{cap}")]
    LatticeTooLarge { candidates: usize, cap: usize },

    #[error("all clusters were skipped; no criterion value can be computed")]
    AllClustersSkipped,

    #[error("quadrature mode search failed for cluster {cluster}")]
    QuadratureModeFailure { cluster: String },

    #[error("invalid response{}: {message}", fmt_line(.line))]
    InvalidResponse { line: Option<u64>, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("missing column {name:?}")]
    MissingColumn { name: String },

    #[error("invalid configuration: {message}")]
    Config { message: String },

    #[error("invalid input: {message}")]
    InvalidInput { message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_line(line: &Option<u64>) -> String {
    match line {
        Some(l) => format!(" on line {l}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid_input(message: impl Into<String>) -> Self {
        Error::InvalidInput { message: message.into() }
    }

    /// Whether this error is a data/configuration problem as opposed to a
    /// numerical fitting failure. The CLI maps the former to exit code 2 and
    /// the latter to exit code 3.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidResponse { .. }
                | Error::Parse { .. }
                | Error::MissingColumn { .. }
                | Error::Config { .. }
                | Error::InvalidInput { .. }
                | Error::LatticeTooLarge { .. }
                | Error::Io(_)
        )
    }
}
