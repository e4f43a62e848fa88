use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid axis {axis} for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("singular matrix: pivot {pivot:e} at column {column} is below tolerance")]
    Singular { column: usize, pivot: f64 },

    #[error("backward requires a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensor is detached from the autodiff graph")]
    Detached,

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("series too short: got {got}, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("unsupported lattice size {0}: need L = 2 or L divisible by 4")]
    UnsupportedLattice(usize),

    #[error("non-finite loss at step {step}: {stats}")]
    NonFiniteLoss { step: u64, stats: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("config/checkpoint mismatch in `{field}`: config has {config}, checkpoint has {checkpoint}")]
    Mismatch {
        field: &'static str,
        config: String,
        checkpoint: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }
}
