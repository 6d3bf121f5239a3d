use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("lattice mismatch: cutoff {left} vs {right}")]
    LatticeMismatch { left: usize, right: usize },
    #[error("field is not Hermitian (defect {defect:e})")]
    NonHermitian { defect: f64 },
    #[error("negative time {0}")]
    InvalidTime(f64),
    #[error("mollifier scale {delta} resolves frequencies beyond the lattice cutoff {n}")]
    DeltaTooSmall { delta: f64, n: usize },
    #[error("partition with {k_max} blocks does not cover the lattice (need at least {needed})")]
    PartitionTooShort { k_max: i32, needed: i32 },
    #[error("blow-up at t = {t}: sup norm {norm:e}")]
    BlowUp { t: f64, norm: f64 },
    #[error("Picard iteration did not converge at step {step}: residual {residual:e}")]
    PicardDidNotConverge { step: usize, residual: f64 },
    #[error("fixed-point map is not contracting: residual grew to {residual:e} at iteration {iteration}")]
    NonContraction { iteration: usize, residual: f64, history: Vec<f64> },
    #[error("quadrature did not converge: relative change {change:e}")]
    QuadratureNotConverged { change: f64 },
    #[error("sqrt-deterministic heterogeneity: negative mass fraction {fraction:e} exceeds tolerance")]
    NegativeMass { fraction: f64 },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for KsError {
    fn from(e: std::io::Error) -> Self {
        KsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KsError>;
