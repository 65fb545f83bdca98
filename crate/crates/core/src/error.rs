//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed line {line} in {path}: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("{count} confidence value(s) outside [0,1] in {path} (first at line {first_line})")]
    ConfidenceOutOfRange {
        path: String,
        count: usize,
        first_line: usize,
    },

    #[error("unknown token `{token}` at line {line} in {path} (vocabulary is fixed)")]
    UnknownToken {
        path: String,
        line: usize,
        token: String,
    },

    #[error("dataset too small to split: {n} quadruples")]
    DatasetTooSmall { n: usize },

    #[error("negative sampling exhausted retry budget ({budget} attempts); graph too dense or vocabulary degenerate")]
    SamplingExhausted { budget: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config parse error at line {line}: {reason}")]
    ConfigParse { line: usize, reason: String },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: String, details: String },
}

pub type Result<T> = std::result::Result<T, Error>;
