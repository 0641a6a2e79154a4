use std::io;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed object name {name:?}: {reason}")]
    MalformedName { name: String, reason: &'static str },

    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("line {line}: {msg}")]
    Invariant { line: usize, msg: String },

    #[error("address {addr:#x} has nonzero bits below bit {bits}")]
    Alignment { addr: u64, bits: u32 },

    #[error("empty series")]
    EmptySeries,

    #[error("alphabet too small: {distinct} distinct values observed but K = 2^{alphabet_log2}")]
    AlphabetTooSmall { distinct: usize, alphabet_log2: f64 },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid policy: {0}")]
    Policy(String),

    #[error("unknown object {0:?}")]
    UnknownObject(String),

    #[error("degenerate range: all values equal {0:#x}")]
    DegenerateRange(u64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("spawn failure: {0}")]
    Spawn(String),

    #[error("allocation failure: {0}")]
    Allocation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
