use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("frame geometry ({got_n1}, {got_n2}) does not match ({want_n1}, {want_n2})")]
    GeometryMismatch {
        want_n1: usize,
        want_n2: usize,
        got_n1: usize,
        got_n2: usize,
    },
    #[error("linear system is singular")]
    Singular,
    #[error("invalid filter: reliability constant {0} is not positive")]
    InvalidFilter(f64),
    #[error("shift {shift} out of range for filter of length {len}")]
    ShiftOutOfRange { shift: isize, len: usize },
    #[error("trellis needs {states} states, budget is {budget}")]
    StateBudgetExceeded { states: usize, budget: usize },
    #[error("enumeration of {count} sequences exceeds budget {budget}")]
    EnumerationBudgetExceeded { count: u128, budget: u128 },
    #[error("window {window} too small (needs odd and at least {min})")]
    WindowTooSmall { window: usize, min: usize },
    #[error("alist parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("parity-check matrix is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
