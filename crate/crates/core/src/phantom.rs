//! Synthetic CT phantoms with analytically known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::volume::{normalize_ct, IntensityVolume, LabelVolume, Shape, Volume, VolumeMeta};

/// Soft-tissue background, in HU (normalizes to 1/3).
pub const BACKGROUND_HU: f32 = 0.0;
/// Contrast-enhanced object, in HU (normalizes to 0.7).
pub const OBJECT_HU: f32 = 550.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn new(center: [f64; 3], radii: [f64; 3]) -> Self {
        Ellipsoid { center, radii }
    }

    pub fn sphere(center: [f64; 3], r: f64) -> Self {
        Ellipsoid::new(center, [r; 3])
    }

    /// Voxel centres sit at integer coordinates.
    pub fn contains(&self, [x, y, z]: [usize; 3]) -> bool {
        let p = [x as f64, y as f64, z as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    fn z_range(&self, nz: usize) -> std::ops::RangeInclusive<usize> {
        let lo = (self.center[2] - self.radii[2]).floor().max(0.0) as usize;
        let hi = ((self.center[2] + self.radii[2]).ceil().max(0.0) as usize).min(nz - 1);
        lo..=hi
    }
}

/// A HU volume plus the binary mask of its target objects.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: IntensityVolume,
    pub mask: LabelVolume,
}

impl Phantom {
    /// Bright `targets` (in the mask) and bright `distractors` (not in the mask).
    pub fn build(shape: Shape, targets: &[Ellipsoid], distractors: &[Ellipsoid]) -> Phantom {
        let meta = VolumeMeta::new(shape);
        let [nx, ny, nz] = shape;
        let slab = nx * ny;
        let mut hu = vec![BACKGROUND_HU; slab * nz];
        let mut gt = vec![0u8; slab * nz];
        hu.par_chunks_mut(slab)
            .zip(gt.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(z, (h, g))| {
                for (objs, is_target) in [(targets, true), (distractors, false)] {
                    for e in objs.iter().filter(|e| e.z_range(nz).contains(&z)) {
                        for y in 0..ny {
                            for x in 0..nx {
                                if e.contains([x, y, z]) {
                                    h[x + nx * y] = OBJECT_HU;
                                    if is_target {
                                        g[x + nx * y] = 1;
                                    }
                                }
                            }
                        }
                    }
                }
            });
        Phantom {
            volume: IntensityVolume::new(meta, hu).expect("finite phantom"),
            mask: LabelVolume::new(meta, gt).expect("binary phantom"),
        }
    }

    pub fn single(shape: Shape, target: Ellipsoid) -> Phantom {
        Phantom::build(shape, &[target], &[])
    }

    pub fn normalized(&self) -> IntensityVolume {
        normalize_ct(&self.volume)
    }
}

/// Fraction of voxels covered by the mask.
pub fn occupancy(m: &LabelVolume) -> f64 {
    m.count() as f64 / m.data().len() as f64
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// A single ellipsoid occupying well under 1% of a `shape` volume, thin
/// enough along z that resizing to a coarse model grid erodes it.
pub fn small_object(shape: Shape, seed: u64) -> Phantom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = [
        uniform(&mut rng, 5.0, 8.0),
        uniform(&mut rng, 5.0, 8.0),
        uniform(&mut rng, 2.5, 4.0),
    ];
    let c = [0, 1, 2].map(|a| uniform(&mut rng, 0.25, 0.75) * shape[a] as f64);
    Phantom::single(shape, Ellipsoid::new(c, r))
}

/// A single ellipsoid filling a large part of the volume.
pub fn large_object(shape: Shape, seed: u64) -> Phantom {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = [0, 1, 2].map(|a| uniform(&mut rng, 0.3, 0.4) * shape[a] as f64);
    let c = [0, 1, 2].map(|a| (0.5 + uniform(&mut rng, -0.05, 0.05)) * shape[a] as f64);
    Phantom::single(shape, Ellipsoid::new(c, r))
}

/// Target ellipsoid plus a separate, smaller bright distractor centred on
/// the same axial slice. Returns the phantom, the target and the distractor.
pub fn two_component(shape: Shape, seed: u64) -> (Phantom, Ellipsoid, Ellipsoid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [nx, ny, nz] = shape.map(|s| s as f64);
    let zc = (nz / 2.0).round();
    let target = Ellipsoid::new(
        [
            uniform(&mut rng, 0.28, 0.34) * nx,
            uniform(&mut rng, 0.4, 0.6) * ny,
            zc,
        ],
        [
            uniform(&mut rng, 0.12, 0.16) * nx,
            uniform(&mut rng, 0.12, 0.16) * ny,
            uniform(&mut rng, 0.2, 0.28) * nz,
        ],
    );
    let distractor = Ellipsoid::new(
        [
            uniform(&mut rng, 0.68, 0.74) * nx,
            uniform(&mut rng, 0.4, 0.6) * ny,
            zc,
        ],
        [
            uniform(&mut rng, 0.08, 0.11) * nx,
            uniform(&mut rng, 0.08, 0.11) * ny,
            uniform(&mut rng, 0.15, 0.2) * nz,
        ],
    );
    (
        Phantom::build(shape, &[target], &[distractor]),
        target,
        distractor,
    )
}

/// Constant-valued volume.
pub fn constant(shape: Shape, value: f32) -> IntensityVolume {
    Volume::filled(VolumeMeta::new(shape), value).expect("valid shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_mask_matches_geometry() {
        let e = Ellipsoid::new([10.0, 12.0, 6.0], [4.0, 3.0, 2.0]);
        let p = Phantom::single([24, 24, 12], e);
        for z in 0..12 {
            for y in 0..24 {
                for x in 0..24 {
                    let inside = e.contains([x, y, z]);
                    assert_eq!(p.mask.get([x, y, z]) == 1, inside);
                    assert_eq!(p.volume.get([x, y, z]) == OBJECT_HU, inside);
                }
            }
        }
    }

    #[test]
    fn suites_have_expected_occupancy() {
        for s in 0..5 {
            assert!(occupancy(&small_object([128, 128, 128], s).mask) < 0.01);
            assert!(occupancy(&large_object([64, 64, 64], s).mask) > 0.1);
            let (p, _, _) = two_component([64, 64, 32], s);
            assert!(p.mask.count() > 0);
            let bright = p.volume.data().iter().filter(|&&v| v == OBJECT_HU).count();
            assert!(bright > p.mask.count());
        }
    }
}
