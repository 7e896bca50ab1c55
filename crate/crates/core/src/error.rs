use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped by how a caller is expected to react: malformed input
/// (`Data`, `InvalidArgument`), identification failures (`Positivity`), and
/// numerical failures of the fitters (`Separation`, `SingularDesign`,
/// `NonConvergence`, `Estimation`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: subject {subject}: {message}")]
    Data {
        file: String,
        line: usize,
        subject: String,
        message: String,
    },

    #[error("invalid cohort: subject {subject}: {message}")]
    Cohort { subject: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("perfect separation in {model}: coefficient {column} diverges")]
    Separation { model: String, column: usize },

    #[error(
        "singular design in {model}: column {column} is linearly dependent on earlier columns"
    )]
    SingularDesign { model: String, column: usize },

    #[error(
        "{model} did not converge after {iterations} iterations (max |score| = {max_score:e})"
    )]
    NonConvergence {
        model: String,
        iterations: usize,
        max_score: f64,
    },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical kernels rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Separation { .. }
                | Error::SingularDesign { .. }
                | Error::NonConvergence { .. }
                | Error::Estimation(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
