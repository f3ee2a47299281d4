use thiserror::Error;

/// Errors raised anywhere in the embedding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("solver did not converge after {iterations} iterations ({context})")]
    NonConvergence { iterations: usize, context: String },

    #[error("series diverges: {0}")]
    Divergence(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (learning rate {eta}); try a smaller learning rate")]
    NonFiniteLoss { epoch: usize, batch: usize, eta: f64 },

    #[error("invalid basis cache: {0}")]
    Cache(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image decode error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
