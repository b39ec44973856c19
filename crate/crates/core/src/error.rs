use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is at or behind the camera plane (depth {depth} m)")]
    BehindCamera { depth: f64 },

    #[error("instance {0} does not appear in the mask")]
    MissingInstance(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scene has no instances")]
    EmptyScene,

    #[error("keypoint schema error: {0}")]
    Schema(String),

    #[error("frame/scene consistency error: {0}")]
    Consistency(String),

    #[error("schema mapping error: {0}")]
    Mapping(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("annotation {annotation_index} references missing image {image_id}")]
    DanglingReference { annotation_index: usize, image_id: u64 },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("conversion error: {0}")]
    Conversion(String),

    #[error("merge error: {0}")]
    Merge(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
