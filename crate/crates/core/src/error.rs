use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid noise model: {0}")]
    Noise(String),

    #[error("length mismatch: expected {expected} sites, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("site {site} out of range for graph with {n} vertices")]
    InvalidSite { site: usize, n: usize },

    #[error("graph has {n} vertices, above the enumeration cap of {cap}; use the Monte Carlo solver")]
    EnumerationCap { n: usize, cap: usize },

    #[error("mapping undefined at infinite/zero temperature ({0}); use exact solver")]
    MappingUndefined(String),

    #[error("inconsistent weight histogram: {0}")]
    Histogram(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("monte carlo: {0}")]
    MonteCarlo(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{method} solver failed at {at}: {source}")]
    Solver {
        method: String,
        at: String,
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
