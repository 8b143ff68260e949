use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("XML parse error at line {line}, column {column}: {message}")]
    Xml { line: u32, column: u32, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("mask dimensions differ: {expected:?} vs {found:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },

    #[error("RLE runs sum to {found}, expected {expected}")]
    InvalidRle { expected: u64, found: u64 },

    #[error("image too small to crop: {width}x{height} < side {side}")]
    ImageTooSmall { width: u32, height: u32, side: u32 },

    #[error("image must be square, got {width}x{height}")]
    NotSquare { width: u32, height: u32 },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("objects too small for any downsampling (width {0} px)")]
    ObjectsTooSmall(f64),

    #[error("loss weights are all zero")]
    ZeroWeights,

    #[error("detection on image {image_id} has no mask (mask mode)")]
    MissingMask { image_id: String },

    #[error("window grid does not fit the image: {0}")]
    GridOverflow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
