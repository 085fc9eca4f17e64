//! Error type shared across the sensing pipeline.

use thiserror::Error;

/// Errors produced by simulation, processing and I/O stages.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is inconsistent or unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violated a structural expectation (shape, finiteness).
    #[error("data error: {0}")]
    Data(String),

    /// An operation precondition was not met.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Every sample that would feed a statistic was degenerate.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// A stream line failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A parsed record did not match the expected schema.
    #[error("schema error at line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },

    /// Model training could not proceed.
    #[error("training error: {0}")]
    Training(String),

    /// Event delivery gave up after exhausting reconnect attempts.
    #[error("delivery error: {delivered} delivered, {dropped} dropped: {message}")]
    Delivery {
        delivered: u64,
        dropped: u64,
        message: String,
    },

    /// A pipeline stage failed; carries the stage name and window index.
    #[error("pipeline stage `{stage}` failed at window {window}: {source}")]
    Stage {
        stage: &'static str,
        window: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: configuration problems exit 2, everything else 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
