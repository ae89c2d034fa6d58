use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    Dimension {
        context: String,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular coefficient system at step {step} (condition estimate {condition:.3e})")]
    Singular { step: usize, condition: f64 },

    #[error(
        "value matrix for controller {controller} at step {step} is not PSD: \
         min eigenvalue {min_eigenvalue:.3e}, norm {norm:.3e}"
    )]
    NotPositiveSemidefinite {
        step: usize,
        controller: usize,
        min_eigenvalue: f64,
        norm: f64,
    },

    #[error("gains did not converge within horizon {horizon}; smallest residual {best:.3e}")]
    NoConvergence {
        horizon: usize,
        best: f64,
        residuals: Vec<f64>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("gain container: {0}")]
    Container(String),

    #[error("incompatible artifact: expected spec hash {expected}, found {found}")]
    Compatibility { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context: context.to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
