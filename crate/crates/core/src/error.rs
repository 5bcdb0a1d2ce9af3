use thiserror::Error;

/// Errors raised by the kac-core operations.
#[derive(Debug, Error)]
pub enum KacError {
    #[error("particle count {0} is below the minimum {1}")]
    TooFewParticles(usize, usize),

    #[error("index {index} out of range for {n} particles")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("pair indices must satisfy i < j, got ({0}, {1})")]
    BadPair(usize, usize),

    #[error("energy {energy} must exceed |p|^2 = {p2}")]
    DegenerateEnergy { energy: f64, p2: f64 },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("invalid scattering density: {0}")]
    InvalidKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all jump rates vanish; the process cannot move")]
    ZeroRate,

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, KacError>;
