//! Image/clip containers in model space (`[-1, 1]` pixel values).

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// A single image `[H, W, 3]` or a clip of F frames, all in `[-1, 1]`.
#[derive(Debug, Clone)]
pub enum Media<T: Scalar> {
    Image(Array3<T>),
    Clip(Vec<Array3<T>>),
}

impl<T: Scalar> Media<T> {
    pub fn frames(&self) -> usize {
        match self {
            Media::Image(_) => 1,
            Media::Clip(f) => f.len(),
        }
    }

    pub fn frame(&self, i: usize) -> &Array3<T> {
        match self {
            Media::Image(a) => a,
            Media::Clip(f) => &f[i],
        }
    }

    pub fn size(&self) -> (usize, usize) {
        let d = self.frame(0).dim();
        (d.0, d.1)
    }

    pub fn map<F: FnMut(&Array3<T>) -> Array3<T>>(&self, mut f: F) -> Media<T> {
        match self {
            Media::Image(a) => Media::Image(f(a)),
            Media::Clip(fr) => Media::Clip(fr.iter().map(f).collect()),
        }
    }

    pub fn zip_map<F: Fn(&Array3<T>, &Array3<T>) -> Array3<T>>(
        &self,
        other: &Media<T>,
        f: F,
    ) -> Result<Media<T>> {
        match (self, other) {
            (Media::Image(a), Media::Image(b)) => Ok(Media::Image(f(a, b))),
            (Media::Clip(a), Media::Clip(b)) if a.len() == b.len() => {
                Ok(Media::Clip(a.iter().zip(b).map(|(x, y)| f(x, y)).collect()))
            }
            _ => Err(Error::Shape("media kinds or lengths differ".into())),
        }
    }

    pub fn standard_normal(like: &Media<T>, rng: &mut impl Rng) -> Media<T> {
        like.map(|a| {
            Array3::from_shape_fn(a.dim(), |_| {
                let v: f64 = StandardNormal.sample(rng);
                T::from_f64(v)
            })
        })
    }

    pub fn all_finite(&self) -> bool {
        (0..self.frames()).all(|i| self.frame(i).iter().all(|v| v.is_finite()))
    }
}

/// `[0, 1]` image to model space `[-1, 1]`.
pub fn encode_image<T: Scalar>(img01: &ndarray::Array3<f32>) -> Array3<T> {
    img01.mapv(|v| T::from_f64(2.0 * v as f64 - 1.0))
}

/// Model space back to `[0, 1]`, clamped.
pub fn decode_image<T: Scalar>(z: &Array3<T>) -> ndarray::Array3<f32> {
    z.mapv(|v| (((v.to_f64() + 1.0) / 2.0).clamp(0.0, 1.0)) as f32)
}

/// Blend per pixel: `mask = 1` takes `known`, else `free`. The mask is `[H, W]`.
pub fn blend_masked<T: Scalar>(
    known: &Array3<T>,
    free: &Array3<T>,
    mask: &Array2<u8>,
) -> Array3<T> {
    Array3::from_shape_fn(free.dim(), |(y, x, c)| {
        if mask[[y, x]] == 1 {
            known[[y, x, c]]
        } else {
            free[[y, x, c]]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_roundtrip_within_bounds() {
        let img = Array3::from_shape_fn((4, 4, 3), |(y, x, c)| {
            ((y * 16 + x * 4 + c) as f32 / 48.0).min(1.0)
        });
        let z: Array3<f64> = encode_image(&img);
        assert!(z.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = decode_image(&z);
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn blend_takes_known_under_mask() {
        let known = Array3::from_elem((2, 2, 3), 1.0f64);
        let free = Array3::from_elem((2, 2, 3), -1.0f64);
        let mut mask = Array2::zeros((2, 2));
        mask[[0, 1]] = 1;
        let out = blend_masked(&known, &free, &mask);
        assert_eq!(out[[0, 1, 0]], 1.0);
        assert_eq!(out[[0, 0, 0]], -1.0);
    }
}
