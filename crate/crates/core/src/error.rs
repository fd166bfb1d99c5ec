use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The PQ index is undefined for a vector with no nonzero entries.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("stale report for {scope}: report has d={reported}, layer has {actual} active")]
    Stale {
        scope: String,
        reported: usize,
        actual: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("invariant violated at epoch {epoch}, layer {layer}: {detail}")]
    Invariant {
        epoch: usize,
        layer: usize,
        detail: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
