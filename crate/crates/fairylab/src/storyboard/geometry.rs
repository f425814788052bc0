//! Shot-crop geometry on normalized coordinates.
//!
//! Close-up crops take the focal sub-box expanded by 1.4x; medium crops take
//! the character box dimensions expanded by 2.0x; wide is the full frame.
//! Every windowed crop is centered on the focal sub-box center (this is what
//! makes close_up nested inside medium unconditional), squared to the render
//! aspect by symmetric expansion of the short side, then translated into the
//! unit square (capped at full frame). Translation clamping preserves
//! nesting and focal containment.

use super::{FocalRegion, ShotType};
use crate::error::{Error, Result};

pub const CLOSE_UP_EXPANSION: f64 = 1.4;
pub const MEDIUM_EXPANSION: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CropBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl CropBox {
    pub fn full_frame() -> CropBox {
        CropBox {
            x: 0.0,
            y: 0.0,
            w: 1.0,
            h: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w > 0.0
            && self.h > 0.0
            && self.x >= -1e-12
            && self.y >= -1e-12
            && self.x + self.w <= 1.0 + 1e-12
            && self.y + self.h <= 1.0 + 1e-12;
        if !ok {
            return Err(Error::Validation(format!("crop box outside unit square: {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, other: &CropBox) -> bool {
        let eps = 1e-9;
        other.x >= self.x - eps
            && other.y >= self.y - eps
            && other.x + other.w <= self.x + self.w + eps
            && other.y + other.h <= self.y + self.h + eps
    }

    fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Scale this box's dimensions by `factor`, placed about `center`.
    fn expanded_about(&self, factor: f64, center: (f64, f64)) -> CropBox {
        CropBox {
            x: center.0 - self.w * factor / 2.0,
            y: center.1 - self.h * factor / 2.0,
            w: self.w * factor,
            h: self.h * factor,
        }
    }

    /// Square to the render aspect by growing the short side about the
    /// center.
    fn squared(&self) -> CropBox {
        let side = self.w.max(self.h);
        let cx = self.x + self.w / 2.0;
        let cy = self.y + self.h / 2.0;
        CropBox {
            x: cx - side / 2.0,
            y: cy - side / 2.0,
            w: side,
            h: side,
        }
    }

    /// Translate into the unit square; sides above 1 collapse to the full
    /// axis. Preserves containment relations between nested boxes.
    fn clamped(&self) -> CropBox {
        fn axis(start: f64, len: f64) -> (f64, f64) {
            if len >= 1.0 {
                return (0.0, 1.0);
            }
            let mut s = start;
            if s < 0.0 {
                s = 0.0;
            }
            if s + len > 1.0 {
                s = 1.0 - len;
            }
            (s, len)
        }
        let (x, w) = axis(self.x, self.w);
        let (y, h) = axis(self.y, self.h);
        CropBox { x, y, w, h }
    }
}

/// Focal sub-box of a character bounding box: head is the top third,
/// upper body the top half, full body the whole box.
pub fn focal_sub_box(bbox: &CropBox, focal: FocalRegion) -> CropBox {
    match focal {
        FocalRegion::FullBody => *bbox,
        FocalRegion::UpperBody => CropBox {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h / 2.0,
        },
        FocalRegion::Head => CropBox {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h / 3.0,
        },
    }
}

/// Crop window for a shot given the character's normalized bounding box.
pub fn compute_crop(
    shot_type: ShotType,
    focal: FocalRegion,
    bbox: &CropBox,
) -> Result<CropBox> {
    if bbox.w <= 0.0 || bbox.h <= 0.0 {
        return Err(Error::Validation(format!("degenerate character bbox {bbox:?}")));
    }
    if bbox.x < 0.0 || bbox.y < 0.0 || bbox.x + bbox.w > 1.0 + 1e-9 || bbox.y + bbox.h > 1.0 + 1e-9
    {
        return Err(Error::Validation(format!("character bbox outside unit square: {bbox:?}")));
    }
    let anchor = focal_sub_box(bbox, focal).center();
    let crop = match shot_type {
        ShotType::Wide => CropBox::full_frame(),
        ShotType::Medium => bbox
            .expanded_about(MEDIUM_EXPANSION, anchor)
            .squared()
            .clamped(),
        ShotType::CloseUp => focal_sub_box(bbox, focal)
            .expanded_about(CLOSE_UP_EXPANSION, anchor)
            .squared()
            .clamped(),
    };
    crop.validate()?;
    Ok(crop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wide_is_always_full_frame() {
        let bbox = CropBox {
            x: 0.3,
            y: 0.2,
            w: 0.2,
            h: 0.5,
        };
        let crop = compute_crop(ShotType::Wide, FocalRegion::Head, &bbox).unwrap();
        assert_eq!(crop, CropBox::full_frame());
    }

    #[test]
    fn head_close_up_centers_on_top_third() {
        let bbox = CropBox {
            x: 0.4,
            y: 0.3,
            w: 0.2,
            h: 0.4,
        };
        let crop = compute_crop(ShotType::CloseUp, FocalRegion::Head, &bbox).unwrap();
        let head = focal_sub_box(&bbox, FocalRegion::Head);
        // crop center matches head center (no clamping for this box)
        let hcx = head.x + head.w / 2.0;
        let hcy = head.y + head.h / 2.0;
        assert!((crop.x + crop.w / 2.0 - hcx).abs() < 1e-12);
        assert!((crop.y + crop.h / 2.0 - hcy).abs() < 1e-12);
        assert!(crop.contains(&head));
    }

    #[test]
    fn degenerate_bbox_rejected() {
        let bbox = CropBox {
            x: 0.5,
            y: 0.5,
            w: 0.0,
            h: 0.2,
        };
        assert!(compute_crop(ShotType::Medium, FocalRegion::FullBody, &bbox).is_err());
    }

    #[test]
    fn crops_are_square_for_square_render() {
        let bbox = CropBox {
            x: 0.1,
            y: 0.05,
            w: 0.25,
            h: 0.7,
        };
        for shot in [ShotType::Medium, ShotType::CloseUp] {
            for focal in [FocalRegion::FullBody, FocalRegion::UpperBody, FocalRegion::Head] {
                let c = compute_crop(shot, focal, &bbox).unwrap();
                assert!(
                    (c.w - c.h).abs() < 1e-12 || (c.w == 1.0 && c.h == 1.0),
                    "{shot:?}/{focal:?} crop {c:?} not aspect-corrected"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        /// 1000 random boxes: the crop contains the focal sub-box, stays in
        /// the unit square, and nests close_up inside medium inside wide.
        #[test]
        fn crop_properties_hold(
            x in 0.0f64..0.95,
            y in 0.0f64..0.95,
            w in 0.01f64..0.9,
            h in 0.01f64..0.9,
            focal_idx in 0usize..3,
        ) {
            let bbox = CropBox {
                x,
                y,
                w: w.min(1.0 - x),
                h: h.min(1.0 - y),
            };
            let focal = [FocalRegion::FullBody, FocalRegion::UpperBody, FocalRegion::Head][focal_idx];
            let close = compute_crop(ShotType::CloseUp, focal, &bbox).unwrap();
            let medium = compute_crop(ShotType::Medium, focal, &bbox).unwrap();
            let wide = compute_crop(ShotType::Wide, focal, &bbox).unwrap();
            let sub = focal_sub_box(&bbox, focal);

            close.validate().unwrap();
            medium.validate().unwrap();
            prop_assert!(close.contains(&sub), "close {close:?} misses focal {sub:?}");
            prop_assert!(medium.contains(&sub));
            prop_assert!(wide.contains(&sub));
            prop_assert!(medium.contains(&close), "medium {medium:?} !>= close {close:?}");
            prop_assert!(wide.contains(&medium));
        }
    }
}
