use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum VolError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "implied volatility inversion failed: price {price} violates the {bound} bound {limit}"
    )]
    Inversion {
        price: f64,
        bound: &'static str,
        limit: f64,
    },

    #[error("invalid quote: {wing} wing vol {vol} is not positive")]
    InvalidQuote { wing: &'static str, vol: f64 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("calibration failed after {starts} starts (best objective {best_objective})")]
    Calibration { starts: usize, best_objective: f64 },

    #[error("integration error: {0}")]
    Integration(String),

    #[error("coverage error: common log-moneyness band [{lo}, {hi}] is too narrow")]
    Coverage { lo: f64, hi: f64 },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("singular node: total variance is zero at X={x}, t={t}")]
    SingularNode { x: f64, t: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("generation failed for asset {asset}: {detail}")]
    Generation { asset: String, detail: String },

    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl VolError {
    /// Coarse category used by the command line for exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            VolError::Shape(_)
            | VolError::Domain(_)
            | VolError::InvalidQuote { .. }
            | VolError::Parse { .. }
            | VolError::Mismatch(_)
            | VolError::Io(_)
            | VolError::Json(_) => ErrorCategory::Data,
            VolError::Inversion { .. }
            | VolError::Divergence(_)
            | VolError::Calibration { .. }
            | VolError::Integration(_)
            | VolError::Coverage { .. }
            | VolError::Resolution(_)
            | VolError::SingularNode { .. }
            | VolError::Generation { .. }
            | VolError::Numerical(_) => ErrorCategory::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Data,
    Numerical,
}

pub type Result<T, E = VolError> = std::result::Result<T, E>;
