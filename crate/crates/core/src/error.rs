use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("crop window (x={x}, y={y}, side={side}) exceeds frame bounds {width}x{height}")]
    CropOutOfBounds {
        x: u32,
        y: u32,
        side: u32,
        width: u32,
        height: u32,
    },

    #[error("cannot decode {}: {reason}", path.display())]
    Ingestion { path: PathBuf, reason: String },

    #[error("{} yields no frames (zero-length video)", path.display())]
    EmptyVideo { path: PathBuf },

    #[error("frames without a parent video record: {}", orphans.join(", "))]
    OrphanFrames { orphans: Vec<String> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data balance error: {0}")]
    DataBalance(String),

    #[error("model bundle error: {0}")]
    Bundle(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
