//! Deterministic prompt and edit simulation from ground truth.

use serde::{Deserialize, Serialize};

use crate::components::{as_bool, interior_point, label_components};
use crate::error::{Error, Result};
use crate::prompts::{Bbox2DPrompt, PointLabel, PointPrompt, PromptSet};
use crate::volume::{LabelVolume, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Point,
    Bbox2d,
}

impl PromptMode {
    pub const ALL: [PromptMode; 2] = [PromptMode::Point, PromptMode::Bbox2d];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Point => "point",
            PromptMode::Bbox2d => "bbox2d",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(PromptMode::Point),
            "bbox2d" | "box" => Ok(PromptMode::Bbox2d),
            other => Err(Error::InvalidPrompt(format!(
                "unknown prompt mode {other:?}"
            ))),
        }
    }
}

/// Deepest point of the largest component of `region`.
fn deepest_in_largest(region: &[bool], shape: Shape) -> Option<([usize; 3], u32, usize)> {
    let comps = label_components(region, shape);
    let l = comps.largest()?;
    let (p, depth) = interior_point(&comps.mask_of(l), shape)?;
    Some((p, depth, comps.sizes[l as usize - 1]))
}

/// Initial prompt derived from `gt`.
///
/// `Point`: the voxel of the largest 26-connected component farthest (in
/// chessboard distance) from background, ties to the lowest `(z, y, x)`.
/// `Bbox2d`: the tight rectangle of the axial slice with the most foreground,
/// ties to the lowest `z`.
pub fn simulate_prompt(gt: &LabelVolume, mode: PromptMode) -> Result<PromptSet> {
    if gt.is_empty() {
        return Err(Error::EmptyMask);
    }
    let shape = gt.shape();
    match mode {
        PromptMode::Point => {
            let (p, _, _) = deepest_in_largest(&as_bool(gt), shape).ok_or(Error::EmptyMask)?;
            Ok(PromptSet::from_point(PointPrompt::positive(p)))
        }
        PromptMode::Bbox2d => {
            let [nx, ny, nz] = shape;
            let mut best = (0usize, 0usize);
            for z in 0..nz {
                let c = gt.axial_slice(z).iter().filter(|&&v| v != 0).count();
                if c > best.1 {
                    best = (z, c);
                }
            }
            let z = best.0;
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            for y in 0..ny {
                for x in 0..nx {
                    if gt.get([x, y, z]) != 0 {
                        x0 = x0.min(x);
                        y0 = y0.min(y);
                        x1 = x1.max(x);
                        y1 = y1.max(y);
                    }
                }
            }
            Ok(PromptSet::from_box(Bbox2DPrompt::new(z, [x0, y0, x1, y1])))
        }
    }
}

/// A corrective click chosen from the prediction error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedEdit {
    pub point: PointPrompt,
    /// Chessboard depth of the click inside its error component.
    pub depth: u32,
    pub component_size: usize,
}

/// Click at the interior-most voxel of the largest error component.
///
/// False negatives (`gt` only) and false positives (`pred` only) are
/// labelled as separate 26-connected components so every component has one
/// sign: positive for a missed region, negative for a spurious one. On equal
/// size the false negative wins.
pub fn simulate_edit(gt: &LabelVolume, pred: &LabelVolume) -> Result<SimulatedEdit> {
    if gt.shape() != pred.shape() {
        return Err(Error::ShapeMismatch {
            expected: gt.shape(),
            actual: pred.shape(),
        });
    }
    let shape = gt.shape();
    let fneg: Vec<bool> = gt
        .data()
        .iter()
        .zip(pred.data())
        .map(|(&g, &p)| g != 0 && p == 0)
        .collect();
    let fpos: Vec<bool> = gt
        .data()
        .iter()
        .zip(pred.data())
        .map(|(&g, &p)| g == 0 && p != 0)
        .collect();
    let a = deepest_in_largest(&fneg, shape);
    let b = deepest_in_largest(&fpos, shape);
    let (pos, depth, size, label) = match (a, b) {
        (None, None) => return Err(Error::NothingToEdit),
        (Some((p, d, s)), None) => (p, d, s, PointLabel::Positive),
        (None, Some((p, d, s))) => (p, d, s, PointLabel::Negative),
        (Some(fa), Some(fb)) => {
            if fa.2 >= fb.2 {
                (fa.0, fa.1, fa.2, PointLabel::Positive)
            } else {
                (fb.0, fb.1, fb.2, PointLabel::Negative)
            }
        }
    };
    Ok(SimulatedEdit {
        point: PointPrompt { pos, label },
        depth,
        component_size: size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{Ellipsoid, Phantom};
    use crate::volume::VolumeMeta;

    fn cube(shape: Shape, lo: [usize; 3], hi: [usize; 3]) -> LabelVolume {
        LabelVolume::from_fn(VolumeMeta::new(shape), |v| {
            (0..3).all(|a| v[a] >= lo[a] && v[a] <= hi[a]) as u8
        })
        .unwrap()
    }

    fn or(a: &LabelVolume, b: &LabelVolume) -> LabelVolume {
        LabelVolume::new(
            *a.meta(),
            a.data().iter().zip(b.data()).map(|(x, y)| x | y).collect(),
        )
        .unwrap()
    }

    /// Brute-force L∞ depth: distance to the nearest background voxel or
    /// to the outside of the grid.
    fn brute_depth(m: &LabelVolume, p: [usize; 3]) -> usize {
        let s = m.shape();
        let mut best = (0..3).map(|a| (p[a] + 1).min(s[a] - p[a])).min().unwrap();
        for z in 0..s[2] {
            for y in 0..s[1] {
                for x in 0..s[0] {
                    if m.get([x, y, z]) == 0 {
                        let d = [x, y, z]
                            .iter()
                            .zip(p)
                            .map(|(&c, q)| c.abs_diff(q))
                            .max()
                            .unwrap();
                        best = best.min(d);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn point_prompt_is_deepest_voxel() {
        let p = Phantom::single(
            [21, 21, 21],
            Ellipsoid::new([10.0, 9.5, 10.0], [6.0, 4.0, 5.0]),
        );
        let ps = simulate_prompt(&p.mask, PromptMode::Point).unwrap();
        let chosen = ps.points[0].pos;
        let s = p.mask.shape();
        let mut best = (0, [0; 3]);
        for z in 0..s[2] {
            for y in 0..s[1] {
                for x in 0..s[0] {
                    if p.mask.get([x, y, z]) != 0 {
                        let d = brute_depth(&p.mask, [x, y, z]);
                        if d > best.0 {
                            best = (d, [x, y, z]);
                        }
                    }
                }
            }
        }
        assert_eq!(chosen, best.1);
        assert_eq!(ps.points[0].label, PointLabel::Positive);
    }

    #[test]
    fn point_prompt_uses_largest_component() {
        let shape = [30, 12, 12];
        let m = or(
            &cube(shape, [1, 1, 1], [3, 3, 3]),
            &cube(shape, [10, 2, 2], [20, 8, 8]),
        );
        let ps = simulate_prompt(&m, PromptMode::Point).unwrap();
        let p = ps.points[0].pos;
        assert!(p[0] >= 10 && p[0] <= 20);
        // odd 7-voxel y/z extent has a unique centre; x ties go to the lowest
        assert_eq!(p, [13, 5, 5]);
    }

    #[test]
    fn bbox_prompt_uses_widest_slice() {
        let shape = [16, 16, 8];
        let m = or(
            &cube(shape, [2, 3, 1], [5, 9, 1]),
            &cube(shape, [4, 4, 2], [6, 6, 6]),
        );
        let ps = simulate_prompt(&m, PromptMode::Bbox2d).unwrap();
        let b = ps.bbox.unwrap();
        assert_eq!((b.slice_z, b.rect), (1, [2, 3, 5, 9]));
        assert!(matches!(
            simulate_prompt(
                &LabelVolume::empty(VolumeMeta::new(shape)).unwrap(),
                PromptMode::Point
            ),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn edit_targets_largest_error() {
        let shape = [40, 20, 20];
        let gt = cube(shape, [2, 2, 2], [12, 12, 12]);
        let blob = cube(shape, [25, 5, 5], [35, 15, 15]);
        let pred = or(&gt, &blob);
        let e = simulate_edit(&gt, &pred).unwrap();
        assert_eq!(e.point.label, PointLabel::Negative);
        assert_eq!(e.point.pos, [30, 10, 10]);
        assert_eq!(e.depth, 6);

        let e = simulate_edit(&pred, &gt).unwrap();
        assert_eq!(e.point.label, PointLabel::Positive);
        assert_eq!(e.point.pos, [30, 10, 10]);

        assert!(matches!(simulate_edit(&gt, &gt), Err(Error::NothingToEdit)));
    }
}
