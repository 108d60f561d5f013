use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeoError>;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parameter layout error: expected {expected} unconstrained values, got {got}")]
    Layout { expected: usize, got: usize },

    #[error("covariance matrix is not positive definite after jitter escalation (theta = {theta})")]
    SingularCovariance { theta: String },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("observed information matrix is singular or not positive definite")]
    InformationSingular,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GeoError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        GeoError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Usage, configuration and data problems map to exit code 2.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            GeoError::Optimization(_) | GeoError::SingularCovariance { .. }
        )
    }
}
