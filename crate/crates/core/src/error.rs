use thiserror::Error;

/// Every failure surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum QpatError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical instability at step {step}: {message}")]
    Instability { step: usize, message: String },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error(
        "inversion did not converge: residual {residual:.3e} \
         (best mu_a = {mu_a:.6} /mm, mu_s' = {mu_s_prime:.6} /mm)"
    )]
    NoConvergence {
        mu_a: f64,
        mu_s_prime: f64,
        residual: f64,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<QpatError>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QpatError>;

impl QpatError {
    /// Process exit code: 2 config, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            QpatError::Config(_)
            | QpatError::Validation(_)
            | QpatError::Parse(_)
            | QpatError::Json(_) => 2,
            QpatError::Domain(_)
            | QpatError::Dimension(_)
            | QpatError::Instability { .. }
            | QpatError::Fit(_)
            | QpatError::Aggregation(_)
            | QpatError::NoConvergence { .. } => 3,
            QpatError::Io(_) => 4,
            QpatError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        QpatError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
