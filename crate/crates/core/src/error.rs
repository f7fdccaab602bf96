use thiserror::Error;

/// Errors raised while building or verifying soliton solutions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("leading coefficient a(z) vanishes near z = {z} (a = {value:e})")]
    DegenerateA { z: f64, value: f64 },

    #[error("speed vector must have a nonzero first component")]
    ZeroLeadingSpeed,

    #[error("speed vector must not be the zero vector")]
    ZeroSpeed,

    #[error("structure has the wrong coupling: expected {expected}")]
    WrongVariant { expected: &'static str },

    #[error("index-1 prolongation condition violated (max defect {max_defect:e})")]
    ConditionViolated { max_defect: f64 },

    #[error("bad parameters: {0}")]
    BadParameters(String),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("z = {z} lies outside the profile domain [{lo}, {hi}]")]
    DomainExceeded { z: f64, lo: f64, hi: f64 },

    #[error("compatibility a'd - ad' = dc violated at z = {z} (defect {defect:e})")]
    CompatibilityViolated { z: f64, defect: f64 },

    #[error("no root bracket on the requested branch at z = {z}")]
    NoBracket { z: f64 },

    #[error("step size underflow at z = {z} (h = {step:e})")]
    StiffnessFailure { z: f64, step: f64 },

    #[error("solution blew up at z = {z}")]
    BlowUp { z: f64 },

    #[error("CFL number {cfl} exceeds stability limit {limit}")]
    CflViolation { cfl: f64, limit: f64 },

    #[error("profile has no speed vector attached")]
    MissingSpeed,

    #[error("{0} cannot be serialized (general callable)")]
    NotSerializable(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
