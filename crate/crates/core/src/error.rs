use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("channel mismatch: input has {input} channels, kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },
    #[error("kernel extent must be odd, got {0}x{1}")]
    EvenKernel(usize, usize),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("loss must be a scalar, got dims {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable {0} is not on this tape")]
    NotOnTape(usize),

    #[error("cycle detected")]
    Cycle,
    #[error("graph is disconnected")]
    Disconnected,
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("missing distance samples for joint pair ({0}, {1})")]
    MissingDistance(usize, usize),
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("schedule is incompatible with graph: {0}")]
    IncompatibleSchedule(String),
    #[error("no kernel for directed edge {0} -> {1}")]
    MissingKernel(usize, usize),

    #[error("state {state} out of range for variable {var} with {count} states")]
    StateOutOfRange { var: String, state: usize, count: usize },
    #[error("state space of {0} configurations exceeds the brute-force limit")]
    StateSpaceTooLarge(u128),
    #[error("invalid CRF: {0}")]
    Crf(String),

    #[error("ground truth ({x}, {y}) for joint {joint} lies outside the {width}x{height} map")]
    OutOfBounds { joint: usize, x: i64, y: i64, width: usize, height: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("invalid config: {0}")]
    Config(String),

    #[error("limb ({0}, {1}) has zero ground-truth length")]
    ZeroLengthLimb(usize, usize),
    #[error("PCK normalizer must be positive, got {0}")]
    NonPositiveNormalizer(f64),
    #[error("image of {size}px is too small for a figure of scale {scale}")]
    ImageTooSmall { size: usize, scale: f64 },
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
