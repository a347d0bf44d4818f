//! Voxel-space geometry: resampling between original, model and ROI grids,
//! inclusive boxes, crop and paste-back.
//!
//! Resampling uses the align-corners=false convention: output voxel `i` of
//! an axis resized from `S` to `T` samples the source at `(i + 0.5)·S/T − 0.5`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{IntensityVolume, LabelVolume, Shape, Volume, VolumeMeta, Voxel};

/// Axis-aligned voxel box. Both `min` and `max` are INCLUSIVE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Box3 {
    pub min: Voxel,
    pub max: Voxel,
}

impl Box3 {
    /// Inclusive box from `min` to `max`; panics if `min > max` on any axis.
    pub fn new(min: Voxel, max: Voxel) -> Self {
        assert!(
            (0..3).all(|a| min[a] <= max[a]),
            "box min {min:?} exceeds max {max:?}"
        );
        Box3 { min, max }
    }

    pub fn point(p: Voxel) -> Self {
        Box3 { min: p, max: p }
    }

    /// The whole volume, `[0, shape−1]` inclusive.
    pub fn full(shape: Shape) -> Self {
        Box3 {
            min: [0; 3],
            max: [shape[0] - 1, shape[1] - 1, shape[2] - 1],
        }
    }

    /// Number of voxels along each axis (inclusive bounds, so `max − min + 1`).
    pub fn extents(&self) -> Shape {
        [
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        ]
    }

    pub fn volume(&self) -> usize {
        self.extents().iter().product()
    }

    pub fn fits_in(&self, shape: Shape) -> bool {
        (0..3).all(|a| self.min[a] <= self.max[a] && self.max[a] < shape[a])
    }

    pub fn contains_box(&self, other: &Box3) -> bool {
        (0..3).all(|a| self.min[a] <= other.min[a] && other.max[a] <= self.max[a])
    }

    pub fn center(&self) -> Voxel {
        [0, 1, 2].map(|a| (self.min[a] + self.max[a]) / 2)
    }

    fn check(&self, shape: Shape) -> Result<()> {
        if self.fits_in(shape) {
            Ok(())
        } else {
            Err(Error::BoxOutOfBounds { b: *self, shape })
        }
    }
}

/// Tests membership with inclusive bounds.
pub fn point_in_box(p: Voxel, b: &Box3) -> bool {
    (0..3).all(|a| b.min[a] <= p[a] && p[a] <= b.max[a])
}

/// Smallest inclusive box containing both inputs.
pub fn union_box(a: &Box3, b: &Box3) -> Box3 {
    Box3 {
        min: [0, 1, 2].map(|i| a.min[i].min(b.min[i])),
        max: [0, 1, 2].map(|i| a.max[i].max(b.max[i])),
    }
}

/// Grows each side of inclusive box `b` by `max(min_margin, round(margin_frac·extent))`
/// voxels, clamped to `[0, bounds−1]`.
pub fn expand_box(b: &Box3, margin_frac: f64, min_margin: usize, bounds: Shape) -> Box3 {
    let ext = b.extents();
    let mut out = *b;
    for a in 0..3 {
        let grow = ((margin_frac * ext[a] as f64).round().max(0.0) as usize).max(min_margin);
        out.min[a] = b.min[a].saturating_sub(grow);
        out.max[a] = (b.max[a] + grow).min(bounds[a] - 1);
    }
    out
}

/// Tight inclusive box around the nonzero voxels; `None` for an empty mask.
pub fn mask_bbox(m: &LabelVolume) -> Option<Box3> {
    let [nx, ny, nz] = m.shape();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    let data = m.data();
    for z in 0..nz {
        for y in 0..ny {
            let row = &data[nx * (y + ny * z)..nx * (y + ny * z + 1)];
            let Some(first) = row.iter().position(|&v| v != 0) else {
                continue;
            };
            let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
            any = true;
            lo = [lo[0].min(first), lo[1].min(y), lo[2].min(z)];
            hi = [hi[0].max(last), hi[1].max(y), hi[2].max(z)];
        }
    }
    any.then_some(Box3 { min: lo, max: hi })
}

/// Source and target shapes of a resize.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShapeMap {
    pub from_shape: Shape,
    pub to_shape: Shape,
}

impl ShapeMap {
    pub fn new(from_shape: Shape, to_shape: Shape) -> Self {
        ShapeMap {
            from_shape,
            to_shape,
        }
    }

    pub fn inverse(&self) -> Self {
        ShapeMap::new(self.to_shape, self.from_shape)
    }
}

/// Maps a voxel through a resize: `floor(p·to/from)` per axis, clamped into `to_shape`.
pub fn map_point(p: Voxel, m: &ShapeMap) -> Voxel {
    [0, 1, 2].map(|a| map_coord(p[a], m.from_shape[a], m.to_shape[a]))
}

#[inline]
pub(crate) fn map_coord(c: usize, from: usize, to: usize) -> usize {
    ((c as u64 * to as u64 / from as u64) as usize).min(to - 1)
}

struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    w: Vec<f64>,
}

fn linear_taps(src: usize, dst: usize) -> AxisTaps {
    let scale = src as f64 / dst as f64;
    let mut taps = AxisTaps {
        lo: Vec::with_capacity(dst),
        hi: Vec::with_capacity(dst),
        w: Vec::with_capacity(dst),
    };
    for i in 0..dst {
        let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = s.floor() as usize;
        taps.lo.push(lo);
        taps.hi.push((lo + 1).min(src - 1));
        taps.w.push(s - lo as f64);
    }
    taps
}

pub(crate) fn nearest_taps(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|i| (((2 * i + 1) as u64 * src as u64) / (2 * dst as u64)) as usize)
        .map(|s| s.min(src - 1))
        .collect()
}

/// Convex interpolation, clamped so rounding never leaves `[min(a,b), max(a,b)]`.
#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    let v = a + w * (b - a);
    v.clamp(a.min(b), a.max(b))
}

/// Trilinear resize to `target` (align-corners=false).
pub fn resample_trilinear(v: &IntensityVolume, target: Shape) -> IntensityVolume {
    assert!(
        target.iter().all(|&t| t >= 1),
        "target extents must be >= 1"
    );
    let src = v.shape();
    if src == target {
        return v.clone();
    }
    let [tx, ty, tz] = [0, 1, 2].map(|a| linear_taps(src[a], target[a]));
    let [nx, ny, _] = src;
    let data = v.data();
    let at = |x: usize, y: usize, z: usize| data[x + nx * (y + ny * z)] as f64;
    let mut out = vec![0f32; target.iter().product()];
    out.par_chunks_mut(target[0] * target[1])
        .enumerate()
        .for_each(|(k, slab)| {
            let (z0, z1, wz) = (tz.lo[k], tz.hi[k], tz.w[k]);
            for j in 0..target[1] {
                let (y0, y1, wy) = (ty.lo[j], ty.hi[j], ty.w[j]);
                for i in 0..target[0] {
                    let (x0, x1, wx) = (tx.lo[i], tx.hi[i], tx.w[i]);
                    let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), wx);
                    let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), wx);
                    let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), wx);
                    let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), wx);
                    let c0 = lerp(c00, c10, wy);
                    let c1 = lerp(c01, c11, wy);
                    slab[i + target[0] * j] = lerp(c0, c1, wz) as f32;
                }
            }
        });
    Volume::from_parts_unchecked(v.meta().resized(target), out)
}

/// Nearest-neighbour resize to `target`; source index is `floor((i + 0.5)·S/T)`.
pub fn resample_nearest<T: Copy + Send + Sync + Default>(
    m: &Volume<T>,
    target: Shape,
) -> Volume<T> {
    assert!(
        target.iter().all(|&t| t >= 1),
        "target extents must be >= 1"
    );
    let src = m.shape();
    if src == target {
        return m.clone();
    }
    let [tx, ty, tz] = [0, 1, 2].map(|a| nearest_taps(src[a], target[a]));
    let [nx, ny, _] = src;
    let data = m.data();
    let mut out = vec![T::default(); target.iter().product()];
    out.par_chunks_mut(target[0] * target[1])
        .enumerate()
        .for_each(|(k, slab)| {
            let z = tz[k];
            for (j, &y) in ty.iter().enumerate() {
                let row = nx * (y + ny * z);
                for (i, &x) in tx.iter().enumerate() {
                    slab[i + target[0] * j] = data[row + x];
                }
            }
        });
    Volume::from_parts_unchecked(m.meta().resized(target), out)
}

/// Copies the contents of inclusive box `b` into a new volume of shape `b.extents()`.
pub fn crop<T: Copy>(v: &Volume<T>, b: &Box3) -> Result<Volume<T>> {
    b.check(v.shape())?;
    let ext = b.extents();
    let [nx, ny, _] = v.shape();
    let mut out = Vec::with_capacity(b.volume());
    let data = v.data();
    for z in b.min[2]..=b.max[2] {
        for y in b.min[1]..=b.max[1] {
            let row = nx * (y + ny * z);
            out.extend_from_slice(&data[row + b.min[0]..=row + b.max[0]]);
        }
    }
    let src = v.meta();
    let meta = VolumeMeta {
        shape: ext,
        spacing: src.spacing,
        origin_offset: [0, 1, 2].map(|a| src.origin_offset[a] + b.min[a] as f32 * src.spacing[a]),
    };
    Ok(Volume::from_parts_unchecked(meta, out))
}

/// Writes `sub` into a zero volume described by `target` at inclusive box `b`.
pub fn paste(sub: &LabelVolume, b: &Box3, target: &VolumeMeta) -> Result<LabelVolume> {
    b.check(target.shape)?;
    if sub.shape() != b.extents() {
        return Err(Error::ShapeMismatch {
            expected: b.extents(),
            actual: sub.shape(),
        });
    }
    let mut out = LabelVolume::empty(*target)?;
    let [nx, ny, _] = target.shape;
    let ext = b.extents();
    let src = sub.data();
    let dst = out.data_mut();
    for (k, z) in (b.min[2]..=b.max[2]).enumerate() {
        for (j, y) in (b.min[1]..=b.max[1]).enumerate() {
            let row = nx * (y + ny * z) + b.min[0];
            let srow = ext[0] * (j + ext[1] * k);
            dst[row..row + ext[0]].copy_from_slice(&src[srow..srow + ext[0]]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_x(values: &[f32]) -> IntensityVolume {
        IntensityVolume::new(VolumeMeta::new([values.len(), 1, 1]), values.to_vec()).unwrap()
    }

    #[test]
    fn trilinear_ramp_upsample() {
        let out = resample_trilinear(&ramp_x(&[0.0, 1.0]), [4, 1, 1]);
        assert_eq!(out.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn trilinear_constant_and_identity() {
        let c = IntensityVolume::filled(VolumeMeta::new([5, 3, 7]), 0.37).unwrap();
        let out = resample_trilinear(&c, [11, 2, 4]);
        assert!(out.data().iter().all(|&v| v == 0.37));
        let r = ramp_x(&[0.1, 0.7, 0.3]);
        assert_eq!(resample_trilinear(&r, [3, 1, 1]), r);
    }

    #[test]
    fn nearest_examples() {
        let m = LabelVolume::new(VolumeMeta::new([2, 1, 1]), vec![1, 0]).unwrap();
        assert_eq!(resample_nearest(&m, [4, 1, 1]).data(), &[1, 1, 0, 0]);
        let ones = LabelVolume::filled(VolumeMeta::new([3, 3, 3]), 1).unwrap();
        assert_eq!(resample_nearest(&ones, [7, 1, 5]).count(), 35);
    }

    #[test]
    fn bbox_examples() {
        let meta = VolumeMeta::new([10, 10, 10]);
        let mut m = LabelVolume::empty(meta).unwrap();
        assert_eq!(mask_bbox(&m), None);
        m.set([3, 4, 5], 1);
        assert_eq!(mask_bbox(&m), Some(Box3::point([3, 4, 5])));
        let mut m = LabelVolume::empty(meta).unwrap();
        m.set([0, 0, 0], 1);
        m.set([9, 2, 1], 1);
        assert_eq!(mask_bbox(&m), Some(Box3::new([0, 0, 0], [9, 2, 1])));
    }

    #[test]
    fn expand_examples() {
        let b = Box3::new([10, 10, 10], [19, 19, 19]);
        assert_eq!(
            expand_box(&b, 0.1, 2, [30, 30, 30]),
            Box3::new([8, 8, 8], [21, 21, 21])
        );
        assert_eq!(expand_box(&b, 0.0, 0, [30, 30, 30]), b);
        let edge = Box3::new([0, 0, 25], [3, 3, 29]);
        let e = expand_box(&edge, 0.5, 4, [30, 30, 30]);
        assert_eq!(e, Box3::new([0, 0, 21], [7, 7, 29]));
    }

    #[test]
    fn crop_indexing() {
        let v = Volume::from_fn(VolumeMeta::new([4, 4, 4]), |[x, y, z]| {
            (x + 4 * y + 16 * z) as f32
        })
        .unwrap();
        let c = crop(&v, &Box3::new([1, 1, 1], [2, 2, 2])).unwrap();
        assert_eq!(c.shape(), [2, 2, 2]);
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(c.get([x, y, z]), v.get([x + 1, y + 1, z + 1]));
                }
            }
        }
        assert!(matches!(
            crop(&v, &Box3::new([0, 0, 0], [4, 0, 0])),
            Err(Error::BoxOutOfBounds { .. })
        ));
    }

    #[test]
    fn paste_zero_and_full_roundtrip() {
        let meta = VolumeMeta::new([4, 3, 2]);
        let m = LabelVolume::from_fn(meta, |[x, y, z]| ((x * y + z) % 2) as u8).unwrap();
        let full = Box3::full(meta.shape);
        assert_eq!(paste(&crop(&m, &full).unwrap(), &full, &meta).unwrap(), m);
        let zero = LabelVolume::empty(VolumeMeta::new([2, 2, 1])).unwrap();
        let p = paste(&zero, &Box3::new([1, 1, 1], [2, 2, 1]), &meta).unwrap();
        assert!(p.is_empty());
        assert!(paste(&zero, &Box3::new([0, 0, 0], [2, 2, 0]), &meta).is_err());
    }

    #[test]
    fn map_point_examples() {
        let m = ShapeMap::new([512, 512, 200], [256, 256, 32]);
        assert_eq!(map_point([0, 0, 0], &m), [0, 0, 0]);
        assert_eq!(map_point([256, 256, 100], &m), [128, 128, 16]);
        assert_eq!(map_point([511, 511, 199], &m), [255, 255, 31]);
    }

    proptest! {
        #[test]
        fn expand_contains_input(
            x0 in 0usize..20, y0 in 0usize..20, z0 in 0usize..20,
            dx in 0usize..10, dy in 0usize..10, dz in 0usize..10,
            frac in 0.0f64..0.5, minm in 0usize..5,
        ) {
            let b = Box3::new([x0, y0, z0], [x0 + dx, y0 + dy, z0 + dz]);
            let e = expand_box(&b, frac, minm, [30, 30, 30]);
            prop_assert!(e.contains_box(&b));
            prop_assert!(e.fits_in([30, 30, 30]));
        }

        #[test]
        fn map_point_stays_inside(
            fx in 1usize..600, fy in 1usize..600, fz in 1usize..300,
            tx in 1usize..300, ty in 1usize..300, tz in 1usize..64,
            px in 0.0f64..1.0, py in 0.0f64..1.0, pz in 0.0f64..1.0,
        ) {
            let p = [(px * fx as f64) as usize, (py * fy as f64) as usize, (pz * fz as f64) as usize];
            let q = map_point(p, &ShapeMap::new([fx, fy, fz], [tx, ty, tz]));
            prop_assert!(q[0] < tx && q[1] < ty && q[2] < tz);
        }
    }
}
