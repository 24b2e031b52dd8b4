use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points: need {needed}, have {available}")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("insufficient points at encoder stage {stage}: need {needed}, have {available}")]
    StageInsufficientPoints {
        stage: usize,
        needed: usize,
        available: usize,
    },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("point count mismatch: header says {header}, payload holds {payload}")]
    CountMismatch { header: usize, payload: usize },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("velodyne scan length {0} is not a multiple of 16 bytes")]
    VelodyneLength(usize),

    #[error("label parse error at column {column}: {message}")]
    LabelParse { column: usize, message: String },

    #[error("model format error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
