//! Request and response bodies of the segmentation HTTP API.
//!
//! Coordinates are voxel indices in `(x, y, z)` order. Boxes are inclusive.

mod rle;

use serde::{Deserialize, Serialize};

pub use rle::{MaskSliceRLE, RleError};
pub use zoomseg_core::geometry::Box3;
pub use zoomseg_core::prompts::{Bbox2DPrompt, PointLabel, PointPrompt, PromptSetJson};
pub use zoomseg_core::session::{EditCase, PassCounters};

use zoomseg_core::geometry::mask_bbox;
use zoomseg_core::volume::LabelVolume;

/// Default window level and width (soft tissue), in HU.
pub const DEFAULT_WL: f32 = 40.0;
pub const DEFAULT_WW: f32 = 400.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeInfo {
    pub volume_id: u64,
    pub shape: [usize; 3],
    pub spacing: [f32; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub volume_id: u64,
    pub prompts: PromptSetJson,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskStats {
    pub voxels: usize,
    pub bbox: Option<Box3>,
}

impl MaskStats {
    pub fn of(m: &LabelVolume) -> Self {
        MaskStats {
            voxels: m.count(),
            bbox: mask_bbox(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionCreated {
    pub session_id: u64,
    pub roi: Box3,
    /// Encoder and decoder passes spent so far.
    pub dice_counters: PassCounters,
    pub mask_stats: MaskStats,
}

/// Edit click; without `label` the server applies the session rule
/// (a click on the current mask is negative, anywhere else positive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditPoint {
    pub xyz: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<PointLabel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub point: EditPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditResponse {
    pub roi: Box3,
    pub encode_delta: usize,
    pub decode_delta: usize,
    pub case: EditCase,
    /// The point as applied, with its resolved label.
    pub point: PointPrompt,
    pub mask_stats: MaskStats,
    /// Initial prompts plus edit points.
    pub prompt_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSummary {
    pub session_id: u64,
    pub volume_id: u64,
    pub shape: [usize; 3],
    pub roi: Box3,
    pub dice_counters: PassCounters,
    pub initial_prompts: PromptSetJson,
    pub edits: Vec<PointPrompt>,
    pub prompt_count: usize,
    pub mask_stats: MaskStats,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub error: String,
    pub status: u16,
}

pub fn prompt_count(initial: &PromptSetJson, edits: usize) -> usize {
    initial.points.len() + initial.bbox.is_some() as usize + edits
}
