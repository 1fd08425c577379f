use thiserror::Error;

/// Why a candidate cannot be used for a pursuit step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    /// The objective denominator vanished (e.g. the zero function).
    ZeroDenominator,
    /// The candidate's prediction lies inside the span of the current
    /// projection subspace.
    InSpan,
}

impl std::fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Degeneracy::ZeroDenominator => f.write_str("objective denominator vanished"),
            Degeneracy::InSpan => f.write_str("projected prediction vanishes"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series did not converge within {terms} terms (tail bound {tail:e})")]
    SeriesNonConvergence { terms: usize, tail: f64 },

    #[error("quadrature did not converge (achieved tolerance {achieved:e})")]
    QuadratureNonConvergence { achieved: f64 },

    #[error("eigen decomposition failed: {0}")]
    Eigen(String),

    #[error("Slepian basis validation failed: {0}")]
    SlepianValidation(String),

    #[error("degenerate candidate: {0}")]
    Degenerate(Degeneracy),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
