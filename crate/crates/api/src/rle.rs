//! Run-length encoding of binary mask slices.
//!
//! Runs alternate background, foreground, background, ... starting with a
//! (possibly zero-length) background run, over the slice in row-major order.

use serde::{Deserialize, Serialize};

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum RleError {
    #[error("runs sum to {sum}, slice has {expected} pixels")]
    LengthMismatch { sum: usize, expected: usize },
    #[error("slice holds {len} pixels, shape {shape:?} needs {expected}")]
    ShapeMismatch {
        len: usize,
        shape: [usize; 2],
        expected: usize,
    },
}

/// One axial mask slice. `shape` is `[H, W]` (`H = ny` rows, `W = nx` columns).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub struct MaskSliceRLE {
    pub z: usize,
    pub shape: [usize; 2],
    pub runs: Vec<usize>,
}

impl MaskSliceRLE {
    /// Encodes a row-major slice; any nonzero pixel counts as foreground.
    pub fn encode(z: usize, shape: [usize; 2], pixels: &[u8]) -> Result<Self, RleError> {
        let expected = shape[0] * shape[1];
        if pixels.len() != expected {
            return Err(RleError::ShapeMismatch {
                len: pixels.len(),
                shape,
                expected,
            });
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &p in pixels {
            let fg = p != 0;
            if fg != current {
                runs.push(len);
                current = fg;
                len = 0;
            }
            len += 1;
        }
        runs.push(len);
        Ok(MaskSliceRLE { z, shape, runs })
    }

    /// Expands back to row-major 0/1 pixels.
    pub fn decode(&self) -> Result<Vec<u8>, RleError> {
        let expected = self.shape[0] * self.shape[1];
        let sum: usize = self.runs.iter().sum();
        if sum != expected {
            return Err(RleError::LengthMismatch { sum, expected });
        }
        let mut out = Vec::with_capacity(expected);
        for (i, &r) in self.runs.iter().enumerate() {
            out.extend(std::iter::repeat_n((i % 2) as u8, r));
        }
        Ok(out)
    }

    pub fn foreground(&self) -> usize {
        self.runs.iter().skip(1).step_by(2).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_and_full_slices() {
        let e = MaskSliceRLE::encode(3, [4, 5], &[0; 20]).unwrap();
        assert_eq!(e.runs, vec![20]);
        let f = MaskSliceRLE::encode(3, [4, 5], &[1; 20]).unwrap();
        assert_eq!(f.runs, vec![0, 20]);
        assert_eq!(f.foreground(), 20);
    }

    #[test]
    fn known_vector() {
        let r = MaskSliceRLE::encode(0, [2, 4], &[0, 1, 1, 0, 0, 0, 1, 1]).unwrap();
        assert_eq!(r.runs, vec![1, 2, 3, 2]);
        assert_eq!(r.decode().unwrap(), vec![0, 1, 1, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn malformed() {
        assert!(MaskSliceRLE::encode(0, [2, 2], &[0; 3]).is_err());
        let bad = MaskSliceRLE {
            z: 0,
            shape: [2, 2],
            runs: vec![1, 2],
        };
        assert_eq!(
            bad.decode(),
            Err(RleError::LengthMismatch {
                sum: 3,
                expected: 4
            })
        );
    }

    proptest! {
        #[test]
        fn roundtrip(h in 1usize..20, w in 1usize..20, seed in any::<u64>(), density in 0u64..8) {
            let px: Vec<u8> = (0..h * w)
                .map(|i| (seed.wrapping_mul(i as u64 + 1).rotate_left(i as u32 % 64) % 8 < density) as u8)
                .collect();
            let r = MaskSliceRLE::encode(1, [h, w], &px).unwrap();
            prop_assert_eq!(r.runs.iter().sum::<usize>(), h * w);
            prop_assert!(r.runs.iter().skip(1).all(|&x| x > 0));
            prop_assert_eq!(r.decode().unwrap(), px);
        }
    }
}
