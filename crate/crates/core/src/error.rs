use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A relative velocity or collision axis was the zero vector.
    ZeroVector,
    /// A parameter lies outside the admissible range of the model.
    Domain(String),
    SizeMismatch {
        left: usize,
        right: usize,
    },
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    /// Brute-force enumeration requested above its size cap.
    TooLarge {
        n: usize,
        max: usize,
    },
    MissingCertificate,
    PlanMismatch {
        plan: usize,
        n: usize,
    },
    /// The first-moment envelope for `1 + gamma < 0` needs an `L^p` norm.
    MissingLpNorm,
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ZeroVector => write!(f, "zero vector has no direction"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::SizeMismatch { left, right } => {
                write!(f, "size mismatch: {left} points against {right}")
            }
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::TooLarge { n, max } => {
                write!(f, "instance of size {n} exceeds the enumeration cap {max}")
            }
            Error::MissingCertificate => write!(f, "transport plan carries no dual potentials"),
            Error::PlanMismatch { plan, n } => {
                write!(
                    f,
                    "plan of size {plan} does not match ensembles of size {n}"
                )
            }
            Error::MissingLpNorm => {
                write!(
                    f,
                    "first-moment bound for 1 + gamma < 0 needs an L^p norm of f0"
                )
            }
        }
    }
}

impl core::error::Error for Error {}
