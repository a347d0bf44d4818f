use std::path::PathBuf;

use crate::geometry::Box3;
use crate::volume::Shape;

/// Errors produced anywhere in the segmentation engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed NIfTI: {0}")]
    Nifti(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("header declares {expected} voxels but data holds {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("non-finite voxel at linear index {0}")]
    NonFinite(usize),
    #[error("invalid volume metadata: {0}")]
    InvalidMeta(String),
    #[error("label volume contains non-binary value {0}")]
    NonBinary(u8),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Shape, actual: Shape },
    #[error("box {b:?} lies outside shape {shape:?}")]
    BoxOutOfBounds { b: Box3, shape: Shape },
    #[error("point {point:?} lies outside shape {shape:?}")]
    PointOutOfBounds { point: [usize; 3], shape: Shape },
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("prompt set is empty")]
    EmptyPrompts,
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("weight manifest: {0}")]
    Weights(String),
    #[error("cached features do not match the current volume/ROI")]
    StaleFeatures,
    #[error("{0}")]
    Stats(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("prediction already equals ground truth")]
    NothingToEdit,
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
