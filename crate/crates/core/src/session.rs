//! Interactive editing with a single-entry feature cache.
//!
//! A session keeps the features of the last zoom-in ROI. An edit point that
//! falls inside that ROI is decoded against the cached features (no encode);
//! one outside grows the ROI to cover it plus a margin, and the grown ROI is
//! encoded once and cached in place of the old one.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, FeatureKey, ImageFeatures};
use crate::error::{Error, Result};
use crate::geometry::{point_in_box, union_box, Box3};
use crate::pipeline::{decode_roi, encode_roi, segment, EngineConfig, InferenceResult};
use crate::prompts::{PointLabel, PointPrompt, PromptSet};
use crate::volume::{IntensityVolume, LabelVolume, Voxel};

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCounters {
    pub encode: usize,
    pub decode: usize,
}

/// Whether an edit reused the cached features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditCase {
    CacheHit,
    Expanded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub point: PointPrompt,
    pub case: EditCase,
    pub roi: Box3,
    pub encode_delta: usize,
    pub decode_delta: usize,
}

#[derive(Clone, Debug)]
pub struct Session {
    id: u64,
    volume: Arc<IntensityVolume>,
    volume_id: u64,
    initial: PromptSet,
    edits: Vec<PointPrompt>,
    current_mask: LabelVolume,
    last_roi: Box3,
    cached: Option<ImageFeatures>,
    counters: PassCounters,
}

impl Session {
    /// Runs the two-pass segmentation and caches the zoom-in features.
    /// `volume` must be normalized to `[0, 1]`.
    pub fn start(
        volume: Arc<IntensityVolume>,
        prompts: PromptSet,
        backend: &dyn Backend,
        cfg: &EngineConfig,
    ) -> Result<Session> {
        let volume_id = volume.content_id();
        Self::start_with_id(volume, volume_id, prompts, backend, cfg)
    }

    /// As [`Session::start`], with a caller-assigned volume identity.
    pub fn start_with_id(
        volume: Arc<IntensityVolume>,
        volume_id: u64,
        prompts: PromptSet,
        backend: &dyn Backend,
        cfg: &EngineConfig,
    ) -> Result<Session> {
        let InferenceResult {
            mask,
            roi,
            mut features,
            encode_count,
            decode_count,
            ..
        } = segment(&volume, &prompts, backend, cfg)?;
        features.fingerprint = Some(FeatureKey { volume_id, roi });
        Ok(Session {
            id: NEXT_SESSION.fetch_add(1, Ordering::Relaxed),
            volume,
            volume_id,
            initial: prompts,
            edits: Vec::new(),
            current_mask: mask,
            last_roi: roi,
            cached: Some(features),
            counters: PassCounters {
                encode: encode_count,
                decode: decode_count,
            },
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn volume(&self) -> &Arc<IntensityVolume> {
        &self.volume
    }

    pub fn volume_id(&self) -> u64 {
        self.volume_id
    }

    pub fn current_mask(&self) -> &LabelVolume {
        &self.current_mask
    }

    /// Inclusive box of the most recent zoom-in.
    pub fn last_roi(&self) -> Box3 {
        self.last_roi
    }

    pub fn counters(&self) -> PassCounters {
        self.counters
    }

    pub fn initial_prompts(&self) -> &PromptSet {
        &self.initial
    }

    /// Edit points in the order they were applied.
    pub fn edits(&self) -> &[PointPrompt] {
        &self.edits
    }

    pub fn cached_key(&self) -> Option<FeatureKey> {
        self.cached.as_ref().and_then(|f| f.fingerprint)
    }

    /// Full prompt history (initial prompts, then edits) in original space.
    pub fn prompts(&self) -> PromptSet {
        let mut ps = self.initial.clone();
        ps.points.extend(self.edits.iter().copied());
        ps
    }

    /// Error-click labelling: a click on current foreground is negative,
    /// anywhere else positive.
    pub fn label_for(&self, pos: Voxel) -> PointLabel {
        if self.current_mask.get(pos) != 0 {
            PointLabel::Negative
        } else {
            PointLabel::Positive
        }
    }

    /// Adds an edit at `pos`, labelled by [`Session::label_for`].
    pub fn edit_at(
        &mut self,
        pos: Voxel,
        backend: &dyn Backend,
        cfg: &EngineConfig,
    ) -> Result<EditOutcome> {
        self.check_point(pos)?;
        let point = PointPrompt {
            pos,
            label: self.label_for(pos),
        };
        self.edit(point, backend, cfg)
    }

    fn check_point(&self, pos: Voxel) -> Result<()> {
        if self.current_mask.contains(pos) {
            Ok(())
        } else {
            Err(Error::PointOutOfBounds {
                point: pos,
                shape: self.current_mask.shape(),
            })
        }
    }

    /// Applies one edit point and re-infers the mask.
    pub fn edit(
        &mut self,
        point: PointPrompt,
        backend: &dyn Backend,
        cfg: &EngineConfig,
    ) -> Result<EditOutcome> {
        self.check_point(point.pos)?;
        let shape = self.volume.shape();
        let hit = point_in_box(point.pos, &self.last_roi) && self.cached.is_some();
        let (roi, features, encode_delta) = if hit {
            let f = self.cached.take().expect("checked above");
            (self.last_roi, f, 0)
        } else {
            let grown = cfg.expand(&union_box(&self.last_roi, &Box3::point(point.pos)), shape);
            let mut f = encode_roi(&self.volume, &grown, backend, cfg)?;
            f.fingerprint = Some(FeatureKey {
                volume_id: self.volume_id,
                roi: grown,
            });
            (grown, f, 1)
        };
        let expected = FeatureKey {
            volume_id: self.volume_id,
            roi,
        };
        if features.fingerprint != Some(expected) {
            return Err(Error::StaleFeatures);
        }

        let mut prompts = self.prompts();
        prompts.points.push(point);
        prompts.prior_mask = Some(self.current_mask.clone());
        self.counters.encode += encode_delta;
        let mask = match decode_roi(&self.volume, &roi, &features, &prompts, backend, cfg) {
            Ok(m) => m,
            Err(e) => {
                // a failed edit leaves the session as it was
                if hit {
                    self.cached = Some(features);
                }
                return Err(e);
            }
        };
        self.counters.decode += 1;

        self.last_roi = roi;
        self.cached = Some(features);
        self.edits.push(point);
        self.current_mask = mask;
        Ok(EditOutcome {
            point,
            case: if hit {
                EditCase::CacheHit
            } else {
                EditCase::Expanded
            },
            roi,
            encode_delta,
            decode_delta: 1,
        })
    }

    /// Rebuilds a session from its prompt history on a fresh start.
    pub fn replay(
        volume: Arc<IntensityVolume>,
        volume_id: u64,
        initial: PromptSet,
        edits: &[PointPrompt],
        backend: &dyn Backend,
        cfg: &EngineConfig,
    ) -> Result<Session> {
        let mut s = Session::start_with_id(volume, volume_id, initial, backend, cfg)?;
        for &p in edits {
            s.edit(p, backend, cfg)?;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{CountingBackend, OracleBackend};
    use crate::geometry::mask_bbox;
    use crate::phantom::{two_component, Ellipsoid, Phantom};
    use crate::prompts::Bbox2DPrompt;

    fn cfg() -> EngineConfig {
        EngineConfig {
            model_shape: [64, 64, 16],
            fallback_extent: [16, 16, 8],
            ..EngineConfig::default()
        }
    }

    fn sphere() -> Arc<IntensityVolume> {
        Arc::new(
            Phantom::single([80, 80, 40], Ellipsoid::sphere([40.0, 40.0, 20.0], 10.0)).normalized(),
        )
    }

    #[test]
    fn start_matches_direct_segment() {
        let v = sphere();
        let backend = CountingBackend::new(OracleBackend::new());
        let ps = PromptSet::from_point(PointPrompt::positive([40, 40, 20]));
        let s = Session::start(v.clone(), ps.clone(), &backend, &cfg()).unwrap();
        let direct = segment(&v, &ps, &OracleBackend::new(), &cfg()).unwrap();
        assert_eq!(s.current_mask(), &direct.mask);
        assert_eq!(
            s.counters(),
            PassCounters {
                encode: 2,
                decode: 2
            }
        );
        assert_eq!(
            s.cached_key(),
            Some(FeatureKey {
                volume_id: v.content_id(),
                roi: direct.roi
            })
        );

        let other = Session::start(v, ps, &backend, &cfg()).unwrap();
        assert_ne!(other.id(), s.id());
    }

    #[test]
    fn in_roi_edit_reuses_features() {
        let backend = CountingBackend::new(OracleBackend::new());
        let mut s = Session::start(
            sphere(),
            PromptSet::from_point(PointPrompt::positive([40, 40, 20])),
            &backend,
            &cfg(),
        )
        .unwrap();
        backend.reset();
        let roi = s.last_roi();
        let out = s.edit_at(roi.center(), &backend, &cfg()).unwrap();
        assert_eq!(out.case, EditCase::CacheHit);
        assert_eq!((backend.encodes(), backend.decodes()), (0, 1));
        assert_eq!((out.encode_delta, out.decode_delta), (0, 1));
        assert_eq!(out.roi, roi);
        assert_eq!(out.point.label, PointLabel::Negative);
    }

    #[test]
    fn out_of_roi_edit_expands() {
        let backend = CountingBackend::new(OracleBackend::new());
        let mut s = Session::start(
            sphere(),
            PromptSet::from_point(PointPrompt::positive([40, 40, 20])),
            &backend,
            &cfg(),
        )
        .unwrap();
        backend.reset();
        let old = s.last_roi();
        let p = [2, 3, 38];
        assert!(!point_in_box(p, &old));
        let out = s.edit_at(p, &backend, &cfg()).unwrap();
        assert_eq!(out.case, EditCase::Expanded);
        assert_eq!((backend.encodes(), backend.decodes()), (1, 1));
        assert!(out.roi.contains_box(&old));
        assert!(point_in_box(p, &out.roi));
        assert_eq!(s.cached_key().unwrap().roi, out.roi);
        assert_eq!(s.counters().encode, 3);
    }

    #[test]
    fn negative_point_removes_false_positive_component() {
        let (ph, target, distractor) = two_component([96, 96, 32], 3);
        let v = Arc::new(ph.normalized());
        let z = target.center[2] as usize;
        let rect = [4, 4, 91, 91];
        let mut s = Session::start(
            v,
            PromptSet::from_box(Bbox2DPrompt::new(z, rect)),
            &OracleBackend::new(),
            &cfg(),
        )
        .unwrap();
        let dc = distractor.center.map(|c| c.round() as usize);
        assert_eq!(s.current_mask().get(dc), 1);
        let out = s.edit_at(dc, &OracleBackend::new(), &cfg()).unwrap();
        assert_eq!(out.point.label, PointLabel::Negative);
        let m = s.current_mask();
        // every remaining voxel belongs to the target side of the phantom
        let b = mask_bbox(m).unwrap();
        assert!((b.max[0] as f64) < (target.center[0] + target.radii[0] + 2.0));
        assert_eq!(m.get(dc), 0);
        assert_eq!(m.get(target.center.map(|c| c.round() as usize)), 1);
    }

    #[test]
    fn replay_reproduces_mask() {
        let backend = OracleBackend::new();
        let v = sphere();
        let ps = PromptSet::from_point(PointPrompt::positive([40, 40, 20]));
        let mut s = Session::start(v.clone(), ps.clone(), &backend, &cfg()).unwrap();
        for p in [[40, 40, 20], [1, 1, 1], [45, 41, 22], [79, 0, 39]] {
            s.edit_at(p, &backend, &cfg()).unwrap();
        }
        let r = Session::replay(v, s.volume_id(), ps, s.edits(), &backend, &cfg()).unwrap();
        assert_eq!(r.current_mask(), s.current_mask());
        assert_eq!(r.last_roi(), s.last_roi());
        assert_eq!(r.counters(), s.counters());
    }

    #[test]
    fn out_of_bounds_edit_rejected() {
        let backend = OracleBackend::new();
        let mut s = Session::start(
            sphere(),
            PromptSet::from_point(PointPrompt::positive([40, 40, 20])),
            &backend,
            &cfg(),
        )
        .unwrap();
        assert!(matches!(
            s.edit_at([80, 0, 0], &backend, &cfg()),
            Err(Error::PointOutOfBounds { .. })
        ));
        assert!(s.edits().is_empty());
    }
}
