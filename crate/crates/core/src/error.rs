use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("window [{lo}, {hi}] is empty")]
    EmptyWindow { lo: i64, hi: i64 },
    #[error("window width {width} exceeds cap {cap}")]
    WindowCap { width: u128, cap: u64 },
    #[error("coefficient at index {index} is not finite")]
    NonFinite { index: i64 },
    #[error("index {index} lies outside window [{lo}, {hi}]")]
    OutsideWindow { index: i64, lo: i64, hi: i64 },
    #[error("grade {grade} is not available (grades start at 1, max {max:?})")]
    Grade { grade: usize, max: Option<usize> },
    #[error("invalid exponent p = {0}")]
    Exponent(f64),
    #[error("invalid Köthe matrix: {0}")]
    Matrix(String),
    #[error("index {index} is not covered by the matrix table")]
    OutsideTable { index: i64 },
    #[error("invalid weight sequence: {0}")]
    Weights(String),
    #[error("operator is not invertible: {0}")]
    NotInvertible(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("certificate does not match the operator: {0}")]
    CertificateMismatch(String),
    #[error("no certificate: {0}")]
    NoCertificate(String),
    #[error("closing defect has norm {norm}, not below delta {delta}")]
    ClosingDefect { norm: f64, delta: f64 },
    #[error("invalid pseudotrajectory: {0}")]
    Pseudotrajectory(String),
    #[error("sample has seminorm {norm}, expected 1")]
    NotUnit { norm: f64 },
    #[error("zero seminorm input")]
    ZeroSeminorm,
    #[error("contraction condition fails: L * |T^-1| = {product} >= 1")]
    NotContractive { product: f64 },
    #[error("iteration did not converge after {iterations} steps (last step {step})")]
    NoConvergence { iterations: usize, step: f64 },
}
