use thiserror::Error;

/// Errors produced by kernel assembly, factorization and TD runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported Bernoulli order {0}")]
    UnsupportedBernoulliOrder(u32),

    #[error("kernel matrix needs at least one point")]
    EmptyPoints,

    #[error("kernel matrix not PSD (pivot {pivot:.3e} at index {index})")]
    NotPsd { pivot: f64, index: usize },

    #[error("step size violates contraction (rho_k * lambda = {0:.6} > 1/2)")]
    StepSizeContraction(f64),

    #[error("divergence detected at iteration {0}")]
    Divergence(usize),

    #[error("ODE integration unstable (norm {norm:.3e} at t = {t:.3})")]
    OdeUnstable { t: f64, norm: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
