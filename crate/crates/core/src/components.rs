//! 26-connected component analysis and chessboard distance on binary grids.

use std::collections::VecDeque;

use crate::volume::{LabelVolume, Shape, Voxel};

const NEIGHBORS_26: [[isize; 3]; 26] = {
    let mut out = [[0isize; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

#[inline]
fn unravel(i: usize, [nx, ny, _]: Shape) -> Voxel {
    [i % nx, (i / nx) % ny, i / (nx * ny)]
}

#[inline]
fn neighbors(v: Voxel, shape: Shape) -> impl Iterator<Item = usize> {
    NEIGHBORS_26.iter().filter_map(move |d| {
        let x = v[0].checked_add_signed(d[0]).filter(|&c| c < shape[0])?;
        let y = v[1].checked_add_signed(d[1]).filter(|&c| c < shape[1])?;
        let z = v[2].checked_add_signed(d[2]).filter(|&c| c < shape[2])?;
        Some(x + shape[0] * (y + shape[1] * z))
    })
}

/// Component labels: 0 is background, components are numbered from 1 in
/// raster order (z, then y, then x) of their first voxel.
#[derive(Clone, Debug)]
pub struct Components {
    pub shape: Shape,
    pub labels: Vec<u32>,
    /// `sizes[k]` is the voxel count of component `k + 1`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Label of the largest component; ties go to the lowest label.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (k, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, k as u32 + 1));
            }
        }
        best.map(|(_, l)| l)
    }

    pub fn mask_of(&self, label: u32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }
}

/// Labels the 26-connected components of `fg`.
pub fn label_components(fg: &[bool], shape: Shape) -> Components {
    assert_eq!(fg.len(), shape.iter().product::<usize>());
    let mut labels = vec![0u32; fg.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for j in neighbors(unravel(i, shape), shape) {
                if fg[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    Components {
        shape,
        labels,
        sizes,
    }
}

/// Grows the union of 26-connected components of `fg` that contain any seed.
/// Seeds that fall on background are ignored.
pub fn flood_fill(fg: &[bool], shape: Shape, seeds: impl IntoIterator<Item = Voxel>) -> Vec<bool> {
    let mut out = vec![false; fg.len()];
    let mut queue = VecDeque::new();
    for s in seeds {
        let i = s[0] + shape[0] * (s[1] + shape[1] * s[2]);
        if fg[i] && !out[i] {
            out[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in neighbors(unravel(i, shape), shape) {
            if fg[j] && !out[j] {
                out[j] = true;
                queue.push_back(j);
            }
        }
    }
    out
}

/// Chessboard (L∞) distance from each foreground voxel to the nearest
/// background voxel, counting everything outside the grid as background.
/// Background voxels get 0, a foreground voxel touching background gets 1.
pub fn chessboard_distance(fg: &[bool], shape: Shape) -> Vec<u32> {
    let [nx, ny, nz] = shape;
    let mut dist: Vec<u32> = fg.iter().map(|&f| if f { u32::MAX } else { 0 }).collect();
    let mut queue = VecDeque::new();
    // Seed with foreground voxels adjacent to background or the grid border.
    for i in 0..fg.len() {
        if !fg[i] {
            continue;
        }
        let v = unravel(i, shape);
        let on_border = (0..3).any(|a| v[a] == 0 || v[a] + 1 == shape[a]);
        if on_border || neighbors(v, shape).any(|j| !fg[j]) {
            dist[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let d = dist[i];
        for j in neighbors(unravel(i, shape), shape) {
            if dist[j] == u32::MAX {
                dist[j] = d + 1;
                queue.push_back(j);
            }
        }
    }
    debug_assert!(nx * ny * nz == dist.len());
    dist
}

/// Deepest voxel of `region` by chessboard distance; ties go to the lowest
/// `(z, y, x)`, i.e. the first in storage order.
pub fn interior_point(region: &[bool], shape: Shape) -> Option<(Voxel, u32)> {
    let dist = chessboard_distance(region, shape);
    let mut best: Option<(usize, u32)> = None;
    for (i, &d) in dist.iter().enumerate() {
        if d > 0 && best.is_none_or(|(_, bd)| d > bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, d)| (unravel(i, shape), d))
}

pub fn as_bool(m: &LabelVolume) -> Vec<bool> {
    m.data().iter().map(|&v| v != 0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(shape: Shape, on: &[Voxel]) -> Vec<bool> {
        let mut g = vec![false; shape.iter().product()];
        for v in on {
            g[v[0] + shape[0] * (v[1] + shape[1] * v[2])] = true;
        }
        g
    }

    #[test]
    fn diagonal_voxels_are_connected() {
        let shape = [3, 3, 3];
        let g = grid(shape, &[[0, 0, 0], [1, 1, 1], [2, 2, 2]]);
        let c = label_components(&g, shape);
        assert_eq!(c.sizes, vec![3]);
        let g = grid(shape, &[[0, 0, 0], [2, 2, 2]]);
        let c = label_components(&g, shape);
        assert_eq!(c.sizes, vec![1, 1]);
        assert_eq!(c.largest(), Some(1));
    }

    #[test]
    fn flood_fill_ignores_background_seeds() {
        let shape = [5, 1, 1];
        let g = grid(shape, &[[0, 0, 0], [1, 0, 0], [3, 0, 0]]);
        let f = flood_fill(&g, shape, [[0, 0, 0], [2, 0, 0]]);
        assert_eq!(f, vec![true, true, false, false, false]);
    }

    #[test]
    fn cube_distance_and_center() {
        let shape = [7, 7, 7];
        let on: Vec<Voxel> = (1..6)
            .flat_map(|z| (1..6).flat_map(move |y| (1..6).map(move |x| [x, y, z])))
            .collect();
        let g = grid(shape, &on);
        let (p, d) = interior_point(&g, shape).unwrap();
        assert_eq!(p, [3, 3, 3]);
        assert_eq!(d, 3);
        // border voxels of the grid count as touching background
        let full = vec![true; 27];
        let (p, d) = interior_point(&full, [3, 3, 3]).unwrap();
        assert_eq!((p, d), ([1, 1, 1], 2));
        assert_eq!(interior_point(&[false; 8], [2, 2, 2]), None);
    }
}
