use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodesignError {
    #[error("design parameter {name} = {value} outside [{lower}, {upper}]")]
    BoundsViolation {
        name: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid mission: {0}")]
    Mission(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("integration diverged: {0}")]
    Divergence(String),
    #[error("linearisation failed: {0}")]
    Linearisation(String),
    #[error("gain synthesis failed: {0}")]
    GainSynthesis(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodesignError>;
