//! Token-level masks derived from pixel masks.

use crate::error::{Error, Result};
use ndarray::Array2;

/// Binary mask aligned to a site's token axis, with its provenance grid.
///
/// Tokens are patch cells in row-major order over the `(rows, cols)` grid; a
/// clip-mode token axis is the per-frame grid tiled frame-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    values: Vec<u8>,
    pub grid: (usize, usize),
}

impl TokenMask {
    pub fn new(values: Vec<u8>, grid: (usize, usize)) -> Result<TokenMask> {
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Validation("token mask is not binary".into()));
        }
        if values.len() != grid.0 * grid.1 {
            return Err(Error::Shape(format!(
                "token mask length {} != grid {}x{}",
                values.len(),
                grid.0,
                grid.1
            )));
        }
        Ok(TokenMask { values, grid })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn complement(&self) -> TokenMask {
        TokenMask {
            values: self.values.iter().map(|&v| 1 - v).collect(),
            grid: self.grid,
        }
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Downsample a pixel mask to a site's token grid: a token is foreground iff
/// its pixel block has coverage >= 0.5.
pub fn downsample_mask(pixel_mask: &Array2<u8>, grid: (usize, usize)) -> Result<TokenMask> {
    let (ph, pw) = pixel_mask.dim();
    let (th, tw) = grid;
    if th == 0 || tw == 0 || ph % th != 0 || pw % tw != 0 {
        return Err(Error::Validation(format!(
            "pixel mask {ph}x{pw} not divisible by token grid {th}x{tw}"
        )));
    }
    let (bh, bw) = (ph / th, pw / tw);
    let mut values = Vec::with_capacity(th * tw);
    for ty in 0..th {
        for tx in 0..tw {
            let mut ones = 0usize;
            for y in 0..bh {
                for x in 0..bw {
                    if pixel_mask[[ty * bh + y, tx * bw + x]] == 1 {
                        ones += 1;
                    }
                }
            }
            values.push(u8::from(2 * ones >= bh * bw));
        }
    }
    TokenMask::new(values, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_foreground_gives_all_ones() {
        let m = Array2::from_elem((8, 8), 1u8);
        let t = downsample_mask(&m, (2, 2)).unwrap();
        assert!(t.values().iter().all(|&v| v == 1));
    }

    #[test]
    fn exactly_half_coverage_rounds_to_one() {
        // 4x4 block, 8 of 16 pixels set
        let mut m = Array2::zeros((4, 4));
        for x in 0..4 {
            m[[0, x]] = 1;
            m[[1, x]] = 1;
        }
        let t = downsample_mask(&m, (1, 1)).unwrap();
        assert_eq!(t.values(), &[1]);
    }

    #[test]
    fn non_divisible_grid_rejected() {
        let m = Array2::zeros((10, 10));
        assert!(downsample_mask(&m, (3, 3)).is_err());
    }

    proptest! {
        /// Against a brute-force block-coverage count on random masks.
        #[test]
        fn matches_bruteforce_coverage(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = Array2::from_shape_fn((16, 16), |_| u8::from(rng.gen::<f64>() < 0.45));
            let t = downsample_mask(&m, (4, 4)).unwrap();
            for ty in 0..4 {
                for tx in 0..4 {
                    let mut count = 0;
                    for y in 0..4 {
                        for x in 0..4 {
                            count += m[[ty*4+y, tx*4+x]] as usize;
                        }
                    }
                    let expect = u8::from(count >= 8);
                    prop_assert_eq!(t.values()[ty*4+tx], expect);
                }
            }
        }
    }
}
