use std::path::PathBuf;

/// Errors produced anywhere in the distillation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("leaf node {0} is not bound")]
    UnboundLeaf(usize),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("node {0} is not a leaf")]
    NotALeaf(usize),

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite {what} ({context})")]
    NonFinite { what: &'static str, context: String },

    #[error("class {class} has {available} samples but {required} are required")]
    ClassTooSmall {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("not a pack file")]
    NotAPackFile,

    #[error("truncated pack: {0}")]
    TruncatedPack(String),

    #[error("not a trajectory file")]
    NotATrajectoryFile,

    #[error("truncated trajectory: {0}")]
    TruncatedTrajectory(String),

    #[error("unsupported {format} version {found} (expected {expected})")]
    UnsupportedVersion {
        format: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("degenerate expert segment: squared distance {distance:e} below {eps:e}")]
    DegenerateSegment { distance: f64, eps: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
