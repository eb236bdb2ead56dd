use std::fmt;

/// Errors produced by the auction-lab library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Malformed model input (dimension mismatch, wrong valuation class, ...).
    Model(String),
    /// Invalid operation input (bad distribution, out-of-range argument, ...).
    Input(String),
    /// An enumeration would exceed its size cap.
    Size { what: String, limit: u64, got: u64 },
    /// Operation defined for additive valuations only.
    UnsupportedValuation(String),
    /// Ratio against a non-positive equilibrium welfare.
    DegenerateEquilibrium(String),
    /// A precondition of the operation does not hold.
    Precondition(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Model(msg) => write!(f, "model error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Size { what, limit, got } => {
                write!(f, "size error: {what} needs {got} > limit {limit}")
            }
            Error::UnsupportedValuation(msg) => write!(f, "unsupported valuation: {msg}"),
            Error::DegenerateEquilibrium(msg) => write!(f, "degenerate equilibrium: {msg}"),
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
