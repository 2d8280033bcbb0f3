use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    /// A scheme was configured outside its stability region.
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("boundary error: {0}")]
    Boundary(String),

    #[error("unsupported degree {degree} (cap is {cap})")]
    UnsupportedDegree { degree: u32, cap: u32 },

    #[error("flow error: {0}")]
    Flow(String),

    #[error("degenerate diffusivity at omega = {omega}: f(s) = {value}")]
    Degeneracy { omega: f64, value: f64 },

    #[error("convergence error: {0}")]
    Convergence(String),

    #[error("reparametrization error on slice {slice}: {detail}")]
    Reparametrization { slice: usize, detail: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
