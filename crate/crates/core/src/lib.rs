//! Promptable 3D CT segmentation with a two-pass zoom-out / zoom-in engine,
//! an interactive editing session with feature caching, and an evaluation
//! harness.

pub mod backend;
pub mod components;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nifti;
pub mod phantom;
pub mod pipeline;
pub mod prompts;
pub mod session;
pub mod volume;

pub use backend::{Backend, CountingBackend, ImageFeatures, ModelConfig, OracleBackend, TinyVit};
pub use error::{Error, Result};
pub use geometry::Box3;
pub use pipeline::{segment, EngineConfig, InferenceResult};
pub use prompts::{Bbox2DPrompt, PointLabel, PointPrompt, PromptSet};
pub use session::{EditCase, EditOutcome, PassCounters, Session};
pub use volume::{IntensityVolume, LabelVolume, Shape, Volume, VolumeMeta, Voxel};
