//! Volumetric grids and CT intensity normalization.
//!
//! All grids are stored with x varying fastest, then y, then z, matching the
//! on-disk NIfTI layout. Shapes and coordinates are always `(x, y, z)`.

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel extents `(x, y, z)`.
pub type Shape = [usize; 3];

/// Voxel index `(x, y, z)`.
pub type Voxel = [usize; 3];

/// Lower clip bound for CT normalization, in Hounsfield Units.
pub const HU_MIN: f32 = -500.0;
/// Upper clip bound for CT normalization, in Hounsfield Units.
pub const HU_MAX: f32 = 1000.0;

pub fn voxel_count(shape: Shape) -> usize {
    shape[0] * shape[1] * shape[2]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub shape: Shape,
    /// Millimetres per voxel.
    pub spacing: [f32; 3],
    /// Position of voxel (0,0,0) in millimetres.
    pub origin_offset: [f32; 3],
}

impl VolumeMeta {
    pub fn new(shape: Shape) -> Self {
        VolumeMeta {
            shape,
            spacing: [1.0; 3],
            origin_offset: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.contains(&0) {
            return Err(Error::InvalidMeta(format!(
                "shape {:?} has a zero extent",
                self.shape
            )));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidMeta(format!(
                "spacing {:?} must be positive",
                self.spacing
            )));
        }
        Ok(())
    }

    /// Metadata for a resampled copy: spacing scaled so the physical extent is kept.
    pub fn resized(&self, target: Shape) -> Self {
        let mut spacing = self.spacing;
        for a in 0..3 {
            spacing[a] = self.spacing[a] * self.shape[a] as f32 / target[a] as f32;
        }
        VolumeMeta {
            shape: target,
            spacing,
            origin_offset: self.origin_offset,
        }
    }
}

/// A dense 3D grid with metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    meta: VolumeMeta,
    data: Vec<T>,
}

/// Real-valued image volume (HU on ingestion, `[0,1]` after [`normalize_ct`]).
pub type IntensityVolume = Volume<f32>;

/// Binary mask volume holding only 0 and 1.
pub type LabelVolume = Volume<u8>;

impl<T: Copy> Volume<T> {
    pub fn filled(meta: VolumeMeta, value: T) -> Result<Self> {
        meta.validate()?;
        Ok(Volume {
            data: vec![value; voxel_count(meta.shape)],
            meta,
        })
    }

    pub fn from_fn(meta: VolumeMeta, mut f: impl FnMut(Voxel) -> T) -> Result<Self> {
        meta.validate()?;
        let [nx, ny, nz] = meta.shape;
        let mut data = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f([x, y, z]));
                }
            }
        }
        Ok(Volume { meta, data })
    }

    pub(crate) fn from_parts_unchecked(meta: VolumeMeta, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), voxel_count(meta.shape));
        Volume { meta, data }
    }

    pub fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    pub fn shape(&self) -> Shape {
        self.meta.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, [x, y, z]: Voxel) -> usize {
        let [nx, ny, _] = self.meta.shape;
        x + nx * (y + ny * z)
    }

    #[inline]
    pub fn get(&self, v: Voxel) -> T {
        self.data[self.index(v)]
    }

    #[inline]
    pub fn set(&mut self, v: Voxel, value: T) {
        let i = self.index(v);
        self.data[i] = value;
    }

    /// Axial slice `z`, row-major with `y` selecting the row (`H = ny`, `W = nx`).
    pub fn axial_slice(&self, z: usize) -> &[T] {
        let [nx, ny, _] = self.meta.shape;
        &self.data[z * nx * ny..(z + 1) * nx * ny]
    }

    pub fn contains(&self, v: Voxel) -> bool {
        v.iter().zip(self.meta.shape.iter()).all(|(&c, &s)| c < s)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            meta: self.meta,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn with_meta(mut self, meta: VolumeMeta) -> Result<Self> {
        if meta.shape != self.meta.shape {
            return Err(Error::ShapeMismatch {
                expected: self.meta.shape,
                actual: meta.shape,
            });
        }
        meta.validate()?;
        self.meta = meta;
        Ok(self)
    }
}

impl IntensityVolume {
    /// Builds an intensity volume, rejecting NaN and infinite voxels.
    pub fn new(meta: VolumeMeta, data: Vec<f32>) -> Result<Self> {
        meta.validate()?;
        let expected = voxel_count(meta.shape);
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Volume { meta, data })
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Content fingerprint over shape and voxel bits; stable within a build.
    pub fn content_id(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.meta.shape.hash(&mut h);
        for v in &self.data {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

impl LabelVolume {
    /// Builds a mask, rejecting anything other than 0/1.
    pub fn new(meta: VolumeMeta, data: Vec<u8>) -> Result<Self> {
        meta.validate()?;
        let expected = voxel_count(meta.shape);
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinary(bad));
        }
        Ok(Volume { meta, data })
    }

    pub fn empty(meta: VolumeMeta) -> Result<Self> {
        Self::filled(meta, 0)
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

/// Clamps to [-500, 1000] HU and min-max scales that window onto `[0, 1]`.
pub fn normalize_ct(v: &IntensityVolume) -> IntensityVolume {
    v.map(normalize_hu)
}

#[inline]
pub fn normalize_hu(x: f32) -> f32 {
    (x.clamp(HU_MIN, HU_MAX) - HU_MIN) / (HU_MAX - HU_MIN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_hu(-500.0), 0.0);
        assert_eq!(normalize_hu(2000.0), 1.0);
        assert_eq!(normalize_hu(250.0), 0.5);
        assert_eq!(normalize_hu(-3000.0), 0.0);
    }

    #[test]
    fn rejects_nan_and_bad_meta() {
        let meta = VolumeMeta::new([2, 1, 1]);
        assert!(matches!(
            IntensityVolume::new(meta, vec![0.0, f32::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(IntensityVolume::new(VolumeMeta::new([0, 1, 1]), vec![]).is_err());
        let mut m = VolumeMeta::new([1, 1, 1]);
        m.spacing[2] = 0.0;
        assert!(m.validate().is_err());
        assert!(matches!(
            LabelVolume::new(meta, vec![0, 2]),
            Err(Error::NonBinary(2))
        ));
    }

    #[test]
    fn indexing_is_x_fastest() {
        let v = Volume::from_fn(VolumeMeta::new([3, 2, 2]), |[x, y, z]| {
            (x + 10 * y + 100 * z) as f32
        })
        .unwrap();
        assert_eq!(v.data()[1], 1.0);
        assert_eq!(v.data()[3], 10.0);
        assert_eq!(v.data()[6], 100.0);
        assert_eq!(v.get([2, 1, 1]), 112.0);
    }

    proptest! {
        #[test]
        fn normalize_in_unit_range(x in -1.0e6f32..1.0e6) {
            let y = normalize_hu(x);
            prop_assert!((0.0..=1.0).contains(&y));
        }

        #[test]
        fn normalize_monotone(a in -5000.0f32..5000.0, b in -5000.0f32..5000.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(normalize_hu(lo) <= normalize_hu(hi));
        }
    }
}
