//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the retrieval and reasoning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed line {line} in {path}: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("template is missing a binding for placeholder {{{placeholder}}}")]
    MissingBinding { placeholder: String },

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("endpoint returned malformed response: {0}")]
    MalformedResponse(String),

    #[error("llm reply could not be parsed: {0}")]
    UnparseableReply(String),

    #[error("selector failure: {0}")]
    Selector(String),

    #[error("no mention could be linked to the graph: {0}")]
    InitializationFailure(String),

    #[error("embedder failure: {0}")]
    Embedder(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("trace has no decision for ({entity}, {relation})")]
    UnknownTraceStep { entity: String, relation: String },

    #[error("pipeline failure: {0}")]
    Pipeline(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
