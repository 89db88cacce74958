//! Shared error type for the whole toolkit.
//!
//! Every fallible operation returns [`Error`]. The CLI maps variants to
//! machine-parseable `E_*` codes on stderr and to process exit classes:
//! degenerate input exits 2, everything else 1.

use crate::data::LinearMap;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a structural precondition (non-finite entries, too few
    /// samples, inconsistent labels, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Two inputs that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input is structurally valid but the quantity is undefined on it
    /// (zero variance, constant ranks, zero native accuracy, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// An operation that needs per-sample labels was given a set without them.
    #[error("missing labels: {0}")]
    MissingLabels(String),

    /// A scenario or grid description is self-contradictory.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// The gradient backend ran out of iterations before meeting its
    /// tolerance. Carries the best iterate so callers can still inspect or
    /// evaluate the partial fit.
    #[error("no convergence after {iterations} iterations (relative change {relative_change:.3e})")]
    ConvergenceFailure {
        iterations: usize,
        relative_change: f64,
        last: Box<LinearMap>,
    },

    /// A file's content could not be interpreted. `line` is 1-based; 0 means
    /// the location is not line-oriented (binary formats).
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// A NaN or infinity where a finite value is required.
    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-parseable code, used as the stderr prefix by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidData(_) => "E_INVALID_DATA",
            Error::ShapeMismatch(_) => "E_SHAPE_MISMATCH",
            Error::DegenerateInput(_) => "E_DEGENERATE",
            Error::MissingLabels(_) => "E_MISSING_LABELS",
            Error::InvalidSpec(_) => "E_INVALID_SPEC",
            Error::ConvergenceFailure { .. } => "E_CONVERGENCE",
            Error::Parse { .. } => "E_PARSE",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::Io(_) => "E_IO",
        }
    }

    /// Process exit class: 2 for degenerate input, 1 for every other failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateInput(_) => 2,
            _ => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_and_exit_classes() {
        let e = Error::DegenerateInput("zero variance".into());
        assert_eq!(e.code(), "E_DEGENERATE");
        assert_eq!(e.exit_code(), 2);

        let e = Error::MissingLabels("set 'a'".into());
        assert_eq!(e.code(), "E_MISSING_LABELS");
        assert_eq!(e.exit_code(), 1);

        let e = Error::Parse {
            path: "m.csv".into(),
            line: 3,
            message: "bad cell".into(),
        };
        assert_eq!(e.code(), "E_PARSE");
        assert!(e.to_string().contains("m.csv:3"));
    }
}
