use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::GeometryError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{context}: row {row}: {message}")]
    Row {
        context: String,
        row: u64,
        message: String,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("dangling parent_id {parent_id:?} (child {char_id:?}, page {doc_id}/{page})")]
    DanglingParent {
        doc_id: String,
        page: u32,
        char_id: String,
        parent_id: String,
    },

    #[error("unknown window {0}")]
    UnknownWindow(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Geometry(#[from] GeometryError),

    #[error("detector failed on window {window}: {message}")]
    Detector { window: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(context: impl Into<String>, source: csv::Error) -> Self {
        Error::Csv {
            context: context.into(),
            source,
        }
    }

    pub fn row(context: impl Into<String>, row: u64, message: impl Into<String>) -> Self {
        Error::Row {
            context: context.into(),
            row,
            message: message.into(),
        }
    }

    /// Malformed or inconsistent input data, as opposed to a failure inside a
    /// pipeline stage.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Detector { .. })
    }
}
