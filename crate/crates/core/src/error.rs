use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed row at line {line}: {msg}")]
    MalformedRow { line: usize, msg: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("missing column {0:?} in header")]
    MissingColumn(String),

    #[error("self pair ({0}, {0}) is not allowed")]
    SelfPair(u32),

    #[error("record id {id} out of range for dataset of size {size}")]
    IdOutOfRange { id: u32, size: usize },

    #[error("conflicting labels for pair ({0}, {1})")]
    ConflictingLabel(u32, u32),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty set has no minhash")]
    EmptyShingleSet,

    #[error("signature length mismatch: expected {expected}, got {got}")]
    SignatureLengthMismatch { expected: usize, got: usize },

    #[error("p undefined: labeled set contains no match pairs")]
    RecallUndefined,

    #[error("estimator undefined at p=0")]
    EstimatorUndefinedAtZero,

    #[error("p={0} out of range (0, 1]")]
    RecallOutOfRange(f64),

    #[error("edge ({0}, {1}) has endpoint outside the vertex range")]
    EndpointOutOfRange(u32, u32),

    #[error("pair ({0}, {1}) is not covered by the labeled truth set")]
    UncoveredPair(u32, u32),

    #[error("training set contains a single class")]
    SingleClassTraining,

    #[error("budget too small for a subgraph")]
    BudgetTooSmall,

    #[error("no completed exploration within the edge-query budget")]
    NoCompletedExploration,

    #[error("bad file format: {0}")]
    BadFileFormat(String),
}
