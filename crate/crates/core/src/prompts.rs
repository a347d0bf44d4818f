//! User prompts and their transformation into model space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{crop, map_coord, resample_nearest, Box3};
use crate::volume::{LabelVolume, Shape, Voxel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointLabel {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointPrompt {
    #[serde(rename = "xyz")]
    pub pos: Voxel,
    pub label: PointLabel,
}

impl PointPrompt {
    pub fn positive(pos: Voxel) -> Self {
        PointPrompt {
            pos,
            label: PointLabel::Positive,
        }
    }

    pub fn negative(pos: Voxel) -> Self {
        PointPrompt {
            pos,
            label: PointLabel::Negative,
        }
    }
}

/// Rectangle on a single axial slice. `rect` is `[x0, y0, x1, y1]`, inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bbox2DPrompt {
    #[serde(rename = "z")]
    pub slice_z: usize,
    pub rect: [usize; 4],
}

impl Bbox2DPrompt {
    /// Normalizes corner order so `x0 <= x1` and `y0 <= y1`.
    pub fn new(slice_z: usize, [x0, y0, x1, y1]: [usize; 4]) -> Self {
        Bbox2DPrompt {
            slice_z,
            rect: [x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)],
        }
    }

    pub fn center(&self) -> Voxel {
        let [x0, y0, x1, y1] = self.rect;
        [(x0 + x1) / 2, (y0 + y1) / 2, self.slice_z]
    }
}

/// Ordered point prompts, at most one 2D box, and an optional prior mask.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PromptSet {
    pub points: Vec<PointPrompt>,
    pub bbox: Option<Bbox2DPrompt>,
    pub prior_mask: Option<LabelVolume>,
}

impl PromptSet {
    pub fn from_point(p: PointPrompt) -> Self {
        PromptSet {
            points: vec![p],
            ..Default::default()
        }
    }

    pub fn from_box(b: Bbox2DPrompt) -> Self {
        PromptSet {
            bbox: Some(b),
            ..Default::default()
        }
    }

    /// No points and no box (a prior mask alone cannot start a segmentation).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.bbox.is_none()
    }

    /// The location a fallback ROI is centred on: the first point, else the box centre.
    pub fn anchor(&self) -> Option<Voxel> {
        self.points
            .first()
            .map(|p| p.pos)
            .or_else(|| self.bbox.map(|b| b.center()))
    }

    /// Checks non-emptiness and that every coordinate lies inside `shape`.
    pub fn validate(&self, shape: Shape) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyPrompts);
        }
        for p in &self.points {
            if (0..3).any(|a| p.pos[a] >= shape[a]) {
                return Err(Error::PointOutOfBounds {
                    point: p.pos,
                    shape,
                });
            }
        }
        if let Some(b) = &self.bbox {
            let [x0, y0, x1, y1] = b.rect;
            if x0 > x1 || y0 > y1 {
                return Err(Error::InvalidPrompt(format!(
                    "box rect {:?} is not normalized",
                    b.rect
                )));
            }
            if x1 >= shape[0] || y1 >= shape[1] || b.slice_z >= shape[2] {
                return Err(Error::InvalidPrompt(format!(
                    "box {:?} on slice {} exceeds shape {shape:?}",
                    b.rect, b.slice_z
                )));
            }
        }
        if let Some(m) = &self.prior_mask {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape,
                    actual: m.shape(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> PromptSetJson {
        PromptSetJson {
            points: self.points.clone(),
            bbox: self.bbox,
        }
    }
}

/// Wire form of a [`PromptSet`]:
/// `{"points":[{"xyz":[x,y,z],"label":"pos"|"neg"}],"box":{"z":k,"rect":[x0,y0,x1,y1]}|null}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptSetJson {
    #[serde(default)]
    pub points: Vec<PointPrompt>,
    #[serde(rename = "box", default)]
    pub bbox: Option<Bbox2DPrompt>,
}

impl From<PromptSetJson> for PromptSet {
    fn from(j: PromptSetJson) -> Self {
        PromptSet {
            points: j.points,
            bbox: j.bbox.map(|b| Bbox2DPrompt::new(b.slice_z, b.rect)),
            prior_mask: None,
        }
    }
}

/// Moves prompts from original space into model space.
///
/// Without an ROI the whole `from_shape` grid is scaled to `model_shape`.
/// With an ROI (inclusive box) coordinates are clamped into it, made
/// ROI-local, then scaled from the ROI extents. The prior mask is cropped
/// to the ROI and nearest-resampled.
pub fn to_model_space(
    ps: &PromptSet,
    from_shape: Shape,
    roi: Option<&Box3>,
    model_shape: Shape,
) -> Result<PromptSet> {
    ps.validate(from_shape)?;
    let roi = match roi {
        Some(r) if !r.fits_in(from_shape) => {
            return Err(Error::BoxOutOfBounds {
                b: *r,
                shape: from_shape,
            })
        }
        Some(r) => *r,
        None => Box3::full(from_shape),
    };
    let ext = roi.extents();
    let local = |c: usize, a: usize| -> usize {
        let c = c.clamp(roi.min[a], roi.max[a]) - roi.min[a];
        map_coord(c, ext[a], model_shape[a])
    };
    let points = ps
        .points
        .iter()
        .map(|p| PointPrompt {
            pos: [0, 1, 2].map(|a| local(p.pos[a], a)),
            label: p.label,
        })
        .collect();
    let bbox = ps.bbox.map(|b| {
        let [x0, y0, x1, y1] = b.rect;
        Bbox2DPrompt {
            slice_z: local(b.slice_z, 2),
            rect: [local(x0, 0), local(y0, 1), local(x1, 0), local(y1, 1)],
        }
    });
    let prior_mask = match &ps.prior_mask {
        Some(m) => Some(resample_nearest(&crop(m, &roi)?, model_shape)),
        None => None,
    };
    Ok(PromptSet {
        points,
        bbox,
        prior_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ORIG: Shape = [512, 512, 200];
    const MODEL: Shape = [256, 256, 32];

    #[test]
    fn origin_point_without_roi() {
        let ps = PromptSet::from_point(PointPrompt::positive([0, 0, 0]));
        let m = to_model_space(&ps, ORIG, None, MODEL).unwrap();
        assert_eq!(m.points[0].pos, [0, 0, 0]);
    }

    #[test]
    fn roi_min_corner_maps_to_origin() {
        let roi = Box3::new([100, 120, 40], [199, 219, 79]);
        let ps = PromptSet::from_point(PointPrompt::negative(roi.min));
        let m = to_model_space(&ps, ORIG, Some(&roi), MODEL).unwrap();
        assert_eq!(m.points[0].pos, [0, 0, 0]);
        assert_eq!(m.points[0].label, PointLabel::Negative);
    }

    #[test]
    fn box_corners_scale() {
        let ps = PromptSet::from_box(Bbox2DPrompt::new(100, [100, 100, 300, 300]));
        let m = to_model_space(&ps, ORIG, None, MODEL).unwrap();
        assert_eq!(
            m.bbox,
            Some(Bbox2DPrompt {
                slice_z: 16,
                rect: [50, 50, 150, 150]
            })
        );
    }

    #[test]
    fn outside_roi_is_clamped() {
        let roi = Box3::new([10, 10, 10], [19, 19, 19]);
        let ps = PromptSet::from_point(PointPrompt::positive([0, 50, 15]));
        let m = to_model_space(&ps, [64, 64, 64], Some(&roi), [20, 20, 20]).unwrap();
        assert_eq!(m.points[0].pos, [0, 18, 10]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            to_model_space(&PromptSet::default(), ORIG, None, MODEL),
            Err(Error::EmptyPrompts)
        ));
        let ps = PromptSet::from_point(PointPrompt::positive([512, 0, 0]));
        assert!(matches!(
            to_model_space(&ps, ORIG, None, MODEL),
            Err(Error::PointOutOfBounds { .. })
        ));
    }

    #[test]
    fn json_shape() {
        let j: PromptSetJson = serde_json::from_str(
            r#"{"points":[{"xyz":[1,2,3],"label":"neg"}],"box":{"z":4,"rect":[9,8,1,2]}}"#,
        )
        .unwrap();
        let ps = PromptSet::from(j);
        assert_eq!(ps.points[0], PointPrompt::negative([1, 2, 3]));
        assert_eq!(ps.bbox.unwrap().rect, [1, 2, 9, 8]);
        let s = serde_json::to_string(&ps.to_json()).unwrap();
        assert_eq!(
            s,
            r#"{"points":[{"xyz":[1,2,3],"label":"neg"}],"box":{"z":4,"rect":[1,2,9,8]}}"#
        );
        let none: PromptSetJson = serde_json::from_str(r#"{"points":[],"box":null}"#).unwrap();
        assert!(PromptSet::from(none).is_empty());
    }

    proptest! {
        #[test]
        fn model_coords_in_bounds_and_preimage_contains_point(
            fx in 1usize..400, fy in 1usize..400, fz in 1usize..200,
            mx in 1usize..300, my in 1usize..300, mz in 1usize..40,
            u in proptest::array::uniform3(0.0f64..1.0),
        ) {
            let from = [fx, fy, fz];
            let model = [mx, my, mz];
            let p = [0, 1, 2].map(|a| (u[a] * from[a] as f64) as usize);
            let ps = PromptSet::from_point(PointPrompt::positive(p));
            let q = to_model_space(&ps, from, None, model).unwrap().points[0].pos;
            for a in 0..3 {
                prop_assert!(q[a] < model[a]);
                // pre-image of q is [q·f/t, (q+1)·f/t)
                prop_assert!(q[a] * from[a] <= p[a] * model[a]);
                prop_assert!(p[a] * model[a] < (q[a] + 1) * from[a]);
            }
            let full = Box3::full(from);
            let with_roi = to_model_space(&ps, from, Some(&full), model).unwrap();
            prop_assert_eq!(with_roi.points[0].pos, q);
        }
    }
}
