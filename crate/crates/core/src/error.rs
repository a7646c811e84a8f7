use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("NaN encountered in {0}")]
    NaN(&'static str),
    #[error("signal of {len} samples is shorter than the {window}-sample window")]
    InputTooShort { len: usize, window: usize },
    #[error("invalid STFT framing: {0}")]
    Format(String),
    #[error("chunk of {len} frames exceeds the maximum chunk length {max}")]
    ChunkTooLong { len: usize, max: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("scene spec error: {0}")]
    Spec(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("traces without a manifest entry: {0:?}")]
    Join(Vec<u64>),
}
