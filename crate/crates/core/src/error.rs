use std::path::PathBuf;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("normalization needs at least 2 features, got {0}")]
    DegenerateWidth(usize),
    #[error("cannot draw {len} distinct classes from {classes}")]
    Capacity { len: usize, classes: usize },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("fit needs at least 3 usable points, got {0}")]
    InsufficientData(usize),
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("paired differences have zero variance but non-zero mean {0}")]
    DegenerateVariance(f64),
    #[error("unpaired rows: {0}")]
    Pairing(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("refusing to overwrite {0} (pass --force)")]
    Exists(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Json(_) | Error::Exists(_) | Error::Capacity { .. }
        )
    }
}
