use autodiff::AutodiffError;
use thiserror::Error;

/// Which kind of non-finite value ended a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonFinite {
    Nan,
    Inf,
}

impl NonFinite {
    /// Classifies a slice; NaN wins over infinity. `None` when all finite.
    pub fn classify(values: &[f64]) -> Option<NonFinite> {
        let mut inf = false;
        for v in values {
            if v.is_nan() {
                return Some(NonFinite::Nan);
            }
            inf |= v.is_infinite();
        }
        inf.then_some(NonFinite::Inf)
    }
}

impl std::fmt::Display for NonFinite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NonFinite::Nan => "nan",
            NonFinite::Inf => "inf",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("integration became unstable ({kind}) at step {step}")]
    Instability { step: usize, kind: NonFinite },

    #[error("trajectory with seed {seed} produced non-finite state at step {step}")]
    Generation { seed: u64, step: usize },

    #[error("dataset format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Config {
        field,
        reason: reason.into(),
    }
}
