use thiserror::Error;

/// Errors raised by the reduction library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),

    #[error("dimension mismatch: expected {expected} entries, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {alpha:?} is not on the level <p, alpha> = {k}")]
    OffLevel { alpha: Vec<u32>, k: u64 },

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("variable index {index} at byte {offset} is outside 1..={n}")]
    IndexOutOfRange { offset: usize, index: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature did not converge: estimate {estimate:e}, achieved relative error {achieved:e}")]
    QuadratureNonConvergence { estimate: f64, achieved: f64 },

    #[error("tail truncation failed: integrand still above threshold at |t| = {t_max}")]
    TailTruncation { t_max: f64 },

    #[error("matrix is not Hermitian: relative asymmetry {asymmetry:e}")]
    NonHermitian { asymmetry: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal mass {off:e})")]
    EigenNonConvergence { sweeps: usize, off: f64 },

    #[error("least-squares system is rank deficient: {0}")]
    RankDeficient(String),

    #[error("model has unpaired non-real sector contributions: imaginary part {imag:e} at k = {k}")]
    UnpairedSector { k: u64, imag: f64 },

    #[error("polytope error: {0}")]
    Polytope(String),
}

pub type Result<T> = std::result::Result<T, Error>;
