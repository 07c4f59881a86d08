use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("non-finite objective after {block} update at epoch {epoch}")]
    NonFinite { block: &'static str, epoch: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("synthetic placement failed: {0}")]
    Placement(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
