//! Deterministic analytic backend: its "features" are the model-space image
//! and decoding is connected-component selection above a fixed threshold.
//!
//! Prompt semantics, applied in order (box first, then points):
//! - box: every supra-threshold voxel inside the rectangle on `slice_z`
//!   seeds a component, so the box is a single-slice rectangle;
//! - positive point: adds the component containing it (no-op on background);
//! - negative point: removes the component containing it.
//!
//! The prior mask is ignored: the ordered prompt history fully determines
//! the result.

use crate::components::flood_fill;
use crate::error::{Error, Result};
use crate::prompts::{PointLabel, PromptSet};
use crate::volume::IntensityVolume;

use super::{logits_from, Backend, ImageFeatures, LogitVolume};

/// Threshold on normalized intensity separating object from background.
pub const ORACLE_TAU: f32 = 0.5;

#[derive(Clone, Debug)]
pub struct OracleBackend {
    tau: f32,
}

impl Default for OracleBackend {
    fn default() -> Self {
        OracleBackend { tau: ORACLE_TAU }
    }
}

impl OracleBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_threshold(tau: f32) -> Self {
        OracleBackend { tau }
    }
}

impl Backend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn encode(&self, volume: &IntensityVolume) -> Result<ImageFeatures> {
        Ok(ImageFeatures {
            grid: volume.shape(),
            dim: 1,
            data: volume.data().to_vec(),
            input_shape: volume.shape(),
            fingerprint: None,
        })
    }

    fn decode(&self, features: &ImageFeatures, prompts: &PromptSet) -> Result<LogitVolume> {
        let shape = features.grid;
        if features.dim != 1 || shape != features.input_shape {
            return Err(Error::InvalidConfig(
                "oracle decode needs oracle features".into(),
            ));
        }
        let mut check = prompts.clone();
        check.prior_mask = None;
        check.validate(shape)?;

        let supra: Vec<bool> = features.data.iter().map(|&v| v >= self.tau).collect();
        let mut fg = vec![false; supra.len()];
        if let Some(b) = &prompts.bbox {
            let [x0, y0, x1, y1] = b.rect;
            let z = b.slice_z;
            let seeds = (y0..=y1).flat_map(|y| (x0..=x1).map(move |x| [x, y, z]));
            let grown = flood_fill(&supra, shape, seeds);
            fg.iter_mut().zip(grown).for_each(|(f, g)| *f |= g);
        }
        for p in &prompts.points {
            let comp = flood_fill(&supra, shape, [p.pos]);
            match p.label {
                PointLabel::Positive => fg.iter_mut().zip(comp).for_each(|(f, c)| *f |= c),
                PointLabel::Negative => fg.iter_mut().zip(comp).for_each(|(f, c)| *f &= !c),
            }
        }
        let data = fg.into_iter().map(|f| if f { 1.0 } else { -1.0 }).collect();
        Ok(logits_from(shape, data))
    }
}
