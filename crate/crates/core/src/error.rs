use thiserror::Error;

/// Errors surfaced by the lattice/Fock machinery.
///
/// The CLI maps these onto exit codes: parameter/shape/config errors -> 2,
/// convergence/divergence/truncation -> 3, capacity -> 4.
#[derive(Debug, Error)]
pub enum MfError {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MfError>;

impl MfError {
    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            MfError::Parameter(_) | MfError::Shape(_) | MfError::Config(_) | MfError::Io(_) => 2,
            MfError::Truncation(_) | MfError::Convergence(_) | MfError::Divergence { .. } => 3,
            MfError::Capacity(_) => 4,
        }
    }
}
