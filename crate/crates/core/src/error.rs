use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid size: n = {0} (need n >= 2)")]
    InvalidSize(usize),
    #[error("invalid potential spec: {0}")]
    Spec(String),
    #[error("non-finite value at site {site}: {value}")]
    NonFinite { site: usize, value: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("expected a sparse-peak potential family, got {0}")]
    NotSparse(&'static str),
    #[error("window [{a}, {b}] does not meet the spectral support")]
    EmptySupport { a: f64, b: f64 },
    #[error("degenerate boundary potential (atom at x = {0})")]
    Degenerate(f64),
    #[error("non-monotone phase on arc near x = {0}; re-trace with a finer grid")]
    NonMonotonePhase(f64),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
