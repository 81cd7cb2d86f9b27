use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate observation for person `{person}` on day {day}")]
    Duplicate { person: String, day: u32 },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("insufficient cohort: {0}")]
    InsufficientCohort(String),

    #[error("rank deficient: requested {requested} components but centered data has rank {rank}")]
    Rank { requested: usize, rank: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error("leakage audit failed: {0}")]
    Leakage(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for CLI error summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Duplicate { .. } => "duplicate",
            Error::Param(_) => "parameter",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::DegenerateTest(_) => "degenerate_test",
            Error::InsufficientCohort(_) => "insufficient_cohort",
            Error::Rank { .. } => "rank",
            Error::Shape(_) => "shape",
            Error::Divergence { .. } => "divergence",
            Error::Leakage(_) => "leakage",
            Error::DegenerateSplit(_) => "degenerate_split",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
