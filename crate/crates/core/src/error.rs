use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("{path}: length {len} is not a multiple of 16 bytes")]
    TruncatedRecord { path: PathBuf, len: u64 },
    #[error("non-finite value in point {index}")]
    NonFiniteValue { index: usize },
    #[error("degenerate region: min must be < max on every axis")]
    DegenerateRegion,
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("manifest line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("manifest line {line}: cloud file {path} does not exist")]
    MissingCloudFile { line: usize, path: PathBuf },
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("pillar cell ({row}, {col}) appears more than once")]
    DuplicateIndex { row: usize, col: usize },
    #[error("pillar cell ({row}, {col}) lies outside the {height}x{width} grid")]
    IndexOutOfGrid {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid pyramid spec: {0}")]
    InvalidPyramid(String),
    #[error("cannot encode non-finite value {0}")]
    NonFiniteInput(f64),
    #[error("code has {got} digits, spec expects {expected}")]
    SpecMismatch { expected: usize, got: usize },
    #[error("channel {0} is outside the feature width")]
    ChannelOutOfRange(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("feature widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("invalid backbone config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in stage {stage}, block {block:?}")]
    NonFiniteActivation { stage: usize, block: Option<usize> },
    #[error("corrupt weight file: {0}")]
    CorruptWeightFile(String),
    #[error("weight file does not match config: {0}")]
    ShapeMismatchOnLoad(String),
    #[error("resolution {resolution} is not divisible by {divisor} at stage {stage}")]
    InvalidResolution {
        stage: usize,
        resolution: usize,
        divisor: usize,
    },
    #[error("invalid synthetic params: {0}")]
    InvalidParams(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numeric aborts (NaN/Inf in the network) as opposed to bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteActivation { .. })
    }
}
