use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension error{}: {message}", layer_suffix(.layer))]
    Dimension {
        layer: Option<usize>,
        message: String,
    },

    /// Operation invoked in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    /// Invalid parameter, unknown identifier or out-of-range knob.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Failure inside a federation run, tagged with where it happened.
    #[error("round {round}, client {client}: {source}")]
    Federation {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },
}

fn layer_suffix(layer: &Option<usize>) -> String {
    match layer {
        Some(i) => format!(" in layer {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn dim(message: impl Into<String>) -> Self {
        Error::Dimension {
            layer: None,
            message: message.into(),
        }
    }

    pub(crate) fn in_layer(layer: usize, message: impl Into<String>) -> Self {
        Error::Dimension {
            layer: Some(layer),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Validation(_)
        )
    }
}
