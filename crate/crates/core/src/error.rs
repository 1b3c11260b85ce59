use thiserror::Error;

use crate::coefficients::AdmissibilityReport;
use crate::solver::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite coefficient or source value at ({x}, {y})")]
    Evaluation { x: f64, y: f64 },

    #[error("coefficient is not admissible: {reason}")]
    Inadmissible {
        reason: String,
        report: Box<AdmissibilityReport>,
    },

    #[error("degenerate weight on {} cell(s), first at {:?}", cells.len(), cells.first())]
    Degenerate { cells: Vec<(usize, usize)> },

    #[error("singular linear system: zero pivot at row {row}")]
    Singular { row: usize },

    #[error("nonlinear solve did not converge: {reason}")]
    NonConvergence {
        reason: String,
        report: Box<SolveReport>,
    },

    #[error("hypothesis violated: {0}")]
    ConditionViolated(String),

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn dimension(expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
