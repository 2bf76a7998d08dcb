use thiserror::Error;

/// Errors raised by the library. Report-style operations (axiom checks,
/// verification harnesses) never error on a failed property; they return it in
/// their report instead.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("time {time} outside [{lo}, {hi}]")]
    TimeOutOfRange { time: usize, lo: usize, hi: usize },
    #[error("empty family")]
    EmptyFamily,
    #[error("mismatched times: expected {expected}, found {found}")]
    TimeMismatch { expected: usize, found: usize },
    #[error("not adapted: value at time {time} differs inside atom {atom}")]
    NotAdapted { time: usize, atom: usize },
    #[error("window mismatch: {0}")]
    WindowMismatch(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("event not measurable: {0}")]
    NotMeasurable(String),
    #[error("invalid stopping time: {0}")]
    InvalidStoppingTime(String),
    #[error("cap exceeded while {what}: {count} > {cap}")]
    CapExceeded { what: String, count: u128, cap: u128 },
    #[error("undefined extended-real arithmetic (-inf + inf)")]
    UndefinedArithmetic,
    #[error("infeasible linear program: {0}")]
    Infeasible(String),
    #[error("invalid utility: {0}")]
    InvalidUtility(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix not positive semidefinite: {0}")]
    NotPsd(String),
}

pub type Result<T> = std::result::Result<T, Error>;
