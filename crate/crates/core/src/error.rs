use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EccoError {
    #[error("non-finite input")]
    NonFinite,
    #[error("FP8 overflow: {0} exceeds 448")]
    Fp8Overflow(f64),
    #[error("invalid FP8 code {0:#04x}")]
    InvalidFp8(u8),
    #[error("invalid scale input {0}: must be positive and finite")]
    InvalidScaleInput(f64),
    #[error("block overflow: {width} bits at cursor {cursor} exceeds capacity {capacity}")]
    BlockOverflow {
        cursor: usize,
        width: u32,
        capacity: usize,
    },
    #[error("value {value} does not fit in {width} bits")]
    ValueTooWide { value: u64, width: u32 },
    #[error("empty tensor")]
    EmptyTensor,
    #[error("tensor shape {rows}x{cols} does not match {len} values")]
    ShapeMismatch { rows: usize, cols: usize, len: usize },
    #[error("insufficient groups for S: {groups} patterns available, S = {s}")]
    InsufficientGroups { groups: usize, s: usize },
    #[error("empty pattern library")]
    EmptyLibrary,
    #[error("negative frequency {0}")]
    NegativeFrequency(f64),
    #[error("cannot build a code over {symbols} symbols with lengths in [{min_len}, {max_len}]")]
    InfeasibleCode {
        symbols: usize,
        min_len: u8,
        max_len: u8,
    },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("corrupt block: {0}")]
    CorruptBlock(String),
    #[error("misaligned merge: left covers {left:?}, right covers {right:?}")]
    MisalignedMerge {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("truncated blob: block {block} of {total} is missing or incomplete")]
    TruncatedBlob { block: u64, total: u64 },
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for EccoError {
    fn from(e: std::io::Error) -> Self {
        EccoError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EccoError>;
