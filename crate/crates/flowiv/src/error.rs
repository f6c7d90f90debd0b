use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to tell a caller
/// which pipeline stage failed and why, without string-matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema: {0}")]
    Schema(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("rank-deficient design (condition number {cond:.3e}): {context}")]
    RankDeficient { context: String, cond: f64 },

    #[error("numeric failure in {context}: {detail}")]
    Numeric { context: String, detail: String },

    #[error("sampler aborted at sweep {sweep}, block {block}: {detail}")]
    Diverged {
        sweep: usize,
        block: &'static str,
        detail: String,
    },

    #[error("band inflation cannot reach the target level: {0}")]
    DegenerateBand(String),

    #[error("insufficient data density: {0}")]
    InsufficientDensity(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tag an error with the pipeline stage it surfaced from.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Extension for tagging results with a stage name at the call site.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
