//! Two-pass zoom-out / zoom-in inference.
//!
//! Zoom-out: the whole volume is resized to the model shape, encoded and
//! decoded once. Zoom-in: the ROI derived from the zoom-out mask is cropped
//! from the original-resolution volume, resized to the model shape, encoded
//! and decoded once more. No sliding window is involved, so a fresh
//! segmentation costs exactly two encodes and two decodes.

use serde::{Deserialize, Serialize};

use crate::backend::{threshold, Backend, ImageFeatures};
use crate::error::{Error, Result};
use crate::geometry::{
    crop, expand_box, mask_bbox, paste, resample_nearest, resample_trilinear, Box3,
};
use crate::prompts::{to_model_space, PromptSet};
use crate::volume::{IntensityVolume, LabelVolume, Shape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub model_shape: Shape,
    /// Fraction of the box extent added on each side of the ROI.
    pub margin_frac: f64,
    /// Lower bound, in voxels, on the per-side ROI margin.
    pub min_margin: usize,
    /// ROI extent used when the zoom-out pass finds nothing.
    pub fallback_extent: Shape,
    pub logit_threshold: f32,
    /// Pass the zoom-out mask as a prior-mask prompt to the zoom-in decode.
    pub zoomin_prior_from_zoomout: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            model_shape: [256, 256, 32],
            margin_frac: 0.1,
            min_margin: 2,
            fallback_extent: [64, 64, 16],
            logit_threshold: 0.0,
            zoomin_prior_from_zoomout: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_shape.contains(&0) || self.fallback_extent.contains(&0) {
            return Err(Error::InvalidConfig(
                "model_shape and fallback_extent must be positive".into(),
            ));
        }
        if !(self.margin_frac.is_finite() && self.margin_frac >= 0.0) {
            return Err(Error::InvalidConfig(
                "margin_frac must be a non-negative number".into(),
            ));
        }
        Ok(())
    }

    pub fn expand(&self, b: &Box3, bounds: Shape) -> Box3 {
        expand_box(b, self.margin_frac, self.min_margin, bounds)
    }
}

/// Output of one segmentation request.
#[derive(Clone, Debug)]
pub struct InferenceResult {
    /// Final mask in original space; zero outside `roi`.
    pub mask: LabelVolume,
    /// Inclusive zoom-in box in original voxels.
    pub roi: Box3,
    /// Zoom-out mask resampled to original space.
    pub zoomout_mask: LabelVolume,
    /// True when the zoom-out pass was empty and the fallback ROI was used.
    pub used_fallback: bool,
    pub encode_count: usize,
    pub decode_count: usize,
    /// Features of the last encoded region (the ROI, or the whole volume for zoom-out only).
    pub features: ImageFeatures,
}

fn check_inputs(
    v: &IntensityVolume,
    ps: &PromptSet,
    backend: &dyn Backend,
    cfg: &EngineConfig,
) -> Result<()> {
    cfg.validate()?;
    if v.shape().contains(&0) {
        return Err(Error::InvalidMeta("degenerate volume".into()));
    }
    if let Some(required) = backend.required_shape() {
        if required != cfg.model_shape {
            return Err(Error::InvalidConfig(format!(
                "backend {} expects model shape {required:?}, config has {:?}",
                backend.name(),
                cfg.model_shape
            )));
        }
    }
    ps.validate(v.shape())
}

/// Box of `cfg.fallback_extent` (clipped to the volume) centred on `anchor`
/// and shifted to stay inside the volume.
pub fn fallback_roi(anchor: [usize; 3], shape: Shape, cfg: &EngineConfig) -> Box3 {
    let mut b = Box3::point(anchor);
    for a in 0..3 {
        let e = cfg.fallback_extent[a].min(shape[a]);
        let lo = anchor[a].saturating_sub(e / 2).min(shape[a] - e);
        b.min[a] = lo;
        b.max[a] = lo + e - 1;
    }
    b
}

struct ZoomOut {
    mask: LabelVolume,
    features: ImageFeatures,
}

fn zoom_out(
    v: &IntensityVolume,
    ps: &PromptSet,
    backend: &dyn Backend,
    cfg: &EngineConfig,
) -> Result<ZoomOut> {
    let small = resample_trilinear(v, cfg.model_shape);
    let prompts = to_model_space(ps, v.shape(), None, cfg.model_shape)?;
    let features = backend.encode(&small)?;
    let logits = backend.decode(&features, &prompts)?;
    let mask = resample_nearest(&threshold(&logits, cfg.logit_threshold), v.shape())
        .with_meta(*v.meta())?;
    Ok(ZoomOut { mask, features })
}

/// Crops `roi`, resizes it to the model shape and encodes it.
pub fn encode_roi(
    v: &IntensityVolume,
    roi: &Box3,
    backend: &dyn Backend,
    cfg: &EngineConfig,
) -> Result<ImageFeatures> {
    let sub = resample_trilinear(&crop(v, roi)?, cfg.model_shape);
    backend.encode(&sub)
}

/// Decodes prompts (original space) against features of `roi` and pastes the
/// thresholded result back into an original-space mask.
pub fn decode_roi(
    v: &IntensityVolume,
    roi: &Box3,
    features: &ImageFeatures,
    ps: &PromptSet,
    backend: &dyn Backend,
    cfg: &EngineConfig,
) -> Result<LabelVolume> {
    let prompts = to_model_space(ps, v.shape(), Some(roi), cfg.model_shape)?;
    let logits = backend.decode(features, &prompts)?;
    let local = resample_nearest(&threshold(&logits, cfg.logit_threshold), roi.extents());
    paste(&local, roi, v.meta())
}

/// Full zoom-out / zoom-in inference. `v` must already be normalized to `[0,1]`.
pub fn segment(
    v: &IntensityVolume,
    ps: &PromptSet,
    backend: &dyn Backend,
    cfg: &EngineConfig,
) -> Result<InferenceResult> {
    check_inputs(v, ps, backend, cfg)?;
    let out = zoom_out(v, ps, backend, cfg)?;
    let (roi, used_fallback) = match mask_bbox(&out.mask) {
        Some(b) => (cfg.expand(&b, v.shape()), false),
        None => {
            let anchor = ps.anchor().ok_or(Error::EmptyPrompts)?;
            (fallback_roi(anchor, v.shape(), cfg), true)
        }
    };
    let mut zoomin_prompts = ps.clone();
    if cfg.zoomin_prior_from_zoomout {
        zoomin_prompts.prior_mask = Some(out.mask.clone());
    }
    let features = encode_roi(v, &roi, backend, cfg)?;
    let mask = decode_roi(v, &roi, &features, &zoomin_prompts, backend, cfg)?;
    Ok(InferenceResult {
        mask,
        roi,
        zoomout_mask: out.mask,
        used_fallback,
        encode_count: 2,
        decode_count: 2,
        features,
    })
}

/// Zoom-out pass only, for A/B comparison against [`segment`].
pub fn zoomout_only(
    v: &IntensityVolume,
    ps: &PromptSet,
    backend: &dyn Backend,
    cfg: &EngineConfig,
) -> Result<InferenceResult> {
    check_inputs(v, ps, backend, cfg)?;
    let out = zoom_out(v, ps, backend, cfg)?;
    Ok(InferenceResult {
        mask: out.mask.clone(),
        roi: Box3::full(v.shape()),
        zoomout_mask: out.mask,
        used_fallback: false,
        encode_count: 1,
        decode_count: 1,
        features: out.features,
    })
}

/// Zoom-in pass alone over a caller-chosen ROI (one encode, one decode).
pub fn zoom_in(
    v: &IntensityVolume,
    ps: &PromptSet,
    roi: &Box3,
    backend: &dyn Backend,
    cfg: &EngineConfig,
) -> Result<(LabelVolume, ImageFeatures)> {
    check_inputs(v, ps, backend, cfg)?;
    let features = encode_roi(v, roi, backend, cfg)?;
    let mask = decode_roi(v, roi, &features, ps, backend, cfg)?;
    Ok((mask, features))
}
