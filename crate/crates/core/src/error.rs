use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: alloc::vec::Vec<usize>,
        actual: alloc::vec::Vec<usize>,
    },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("degenerate step t={t}: variance is zero")]
    DegenerateStep { t: usize },
    #[error("division by zero in coefficients for t_hi={t_hi}; use the start rule")]
    DivisionByZero { t_hi: usize },
    #[error("invalid condition: {0}")]
    InvalidCondition(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
}
