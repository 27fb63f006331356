use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid word: {0}")]
    InvalidWord(String),

    #[error("invalid block: {0}")]
    InvalidBlock(String),

    #[error("index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("point {x} outside {what} [{lo}, {hi}]")]
    OutOfDomain {
        x: f64,
        lo: f64,
        hi: f64,
        what: &'static str,
    },

    #[error("separation violated: branch intervals {a} and {b} overlap")]
    Separation { a: usize, b: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no convergence in {what} after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("no sign change of pressure on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("eigenfunction not strictly positive (min {min:e})")]
    NonPositiveEigenfunction { min: f64 },

    #[error("depth cap {cap} exceeded at frequency {xi}")]
    DepthCap { cap: usize, xi: f64 },

    #[error("budget exceeded: {what} needs {needed}, limit {limit}")]
    Budget {
        what: &'static str,
        needed: f64,
        limit: f64,
    },

    #[error("zeta value {value} outside [{lo}, {hi}]")]
    ZetaOutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("cache file rejected: {0}")]
    CacheMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
