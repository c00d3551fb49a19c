use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("missing parameter {name}")]
    MissingParam { name: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("teacher probability row {row} sums to {sum}, not 1")]
    UnnormalizedTeacher { row: usize, sum: f64 },

    #[error("invalid config field {field}: {message}")]
    Config { field: String, message: String },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("search space too large: {total} paths exceed cap {cap}")]
    SpaceTooLarge { total: u128, cap: u64 },

    #[error("no feasible path found: {0}")]
    Infeasible(String),

    #[error("no eligible teacher on the board")]
    NoTeacher,

    #[error("kendall tau undefined: {0}")]
    DegenerateRanking(String),

    #[error("empty dataset split: {0}")]
    EmptyDataset(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: config problems are 1, runtime failures 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Json(_) => 1,
            _ => 2,
        }
    }
}
