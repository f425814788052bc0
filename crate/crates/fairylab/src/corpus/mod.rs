//! Procedural sprite corpus: articulated stick-figure characters rendered in
//! distinct palettes/textures, short motion clips with exact foreground masks,
//! and a directory layout with a JSON index.
//!
//! Characters are torso + head + four limbs so that partial motions (one arm
//! waving, legs walking) are constructible. Frames have a pure white
//! background; the mask marks exactly the pixels written by a drawing
//! primitive.

mod io;
mod motion;
mod render;

pub use io::{
    frame_to_rgb8, generate_corpus, load_corpus, rgb8_to_frame, CorpusConfig, CorpusEntry,
    CorpusIndex, LoadedClip,
};
pub use motion::{generate_motion_clip, motion_pose, MotionId};
pub use render::{character_bbox, render_character, PoseParams};

use crate::error::{Error, Result};
use ndarray::{Array2, Array3};

/// Fill texture applied inside the character's painted regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Flat,
    Hatched,
    Dotted,
}

/// Visual identity of a character: palette, stroke, texture, outline.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StyleSpec {
    pub style_id: u32,
    /// 3 to 5 RGB colors, pairwise distinct. `palette[0]` fills the torso,
    /// later entries the head and limbs.
    pub palette: Vec<[u8; 3]>,
    /// Outline stroke width in pixels, 1..=3.
    pub stroke_width: u32,
    pub texture: Texture,
    pub outline_color: [u8; 3],
}

impl StyleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.palette.len() < 3 || self.palette.len() > 5 {
            return Err(Error::Validation(format!(
                "palette must have 3..=5 colors, got {}",
                self.palette.len()
            )));
        }
        for i in 0..self.palette.len() {
            for j in (i + 1)..self.palette.len() {
                if self.palette[i] == self.palette[j] {
                    return Err(Error::Validation(format!(
                        "palette colors {i} and {j} are identical"
                    )));
                }
            }
        }
        if self.stroke_width < 1 || self.stroke_width > 3 {
            return Err(Error::Validation(format!(
                "stroke_width must be 1..=3, got {}",
                self.stroke_width
            )));
        }
        Ok(())
    }

    /// Deterministic style for a style id: golden-ratio spaced hues keep
    /// palettes well separated across ids.
    pub fn from_id(style_id: u32) -> StyleSpec {
        let hue = (style_id as f32 * 0.618_034 + 0.05).fract();
        let n_colors = 3 + (style_id % 3) as usize;
        let mut palette = Vec::with_capacity(n_colors);
        for k in 0..n_colors {
            let h = (hue + k as f32 * 0.13).fract();
            let s = 0.75 - 0.12 * (k % 2) as f32;
            let v = 0.85 - 0.15 * (k as f32 / n_colors as f32);
            palette.push(hsv_to_rgb(h, s, v));
        }
        let outline = hsv_to_rgb(hue, 0.9, 0.25);
        let spec = StyleSpec {
            style_id,
            palette,
            stroke_width: 1 + style_id % 3,
            texture: match style_id % 3 {
                0 => Texture::Flat,
                1 => Texture::Hatched,
                _ => Texture::Dotted,
            },
            outline_color: outline,
        };
        debug_assert!(spec.validate().is_ok());
        spec
    }

    /// Descriptive keyword phrase for this style, used as the conditioning
    /// prompt ("deep teal dotted thick-stroke style" rather than a rare
    /// identifier token).
    pub fn descriptive_phrase(&self) -> Vec<String> {
        let mut words = vec![color_name(self.palette[0]).to_string()];
        words.push(
            match self.texture {
                Texture::Flat => "flat",
                Texture::Hatched => "hatched",
                Texture::Dotted => "dotted",
            }
            .to_string(),
        );
        words.push(
            match self.stroke_width {
                1 => "thin-stroke",
                2 => "medium-stroke",
                _ => "thick-stroke",
            }
            .to_string(),
        );
        words
    }
}

/// One rendered frame: RGB image in `[0, 1]` and a binary foreground mask.
#[derive(Debug, Clone)]
pub struct SpriteFrame {
    /// `[H, W, 3]`, values in `[0, 1]`.
    pub image: Array3<f32>,
    /// `[H, W]`, 1 where a drawing primitive wrote the pixel.
    pub mask: Array2<u8>,
}

impl SpriteFrame {
    pub fn height(&self) -> usize {
        self.image.dim().0
    }
    pub fn width(&self) -> usize {
        self.image.dim().1
    }
    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.image.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("frame image has non-finite values".into()));
        }
        if self.mask.iter().any(|&m| m > 1) {
            return Err(Error::Validation("mask is not strictly binary".into()));
        }
        if self.foreground_count() == 0 {
            return Err(Error::Validation("frame has an empty foreground mask".into()));
        }
        Ok(())
    }
}

/// A short frame sequence of one character in one style: the training atom.
#[derive(Debug, Clone)]
pub struct SpriteClip {
    pub frames: Vec<SpriteFrame>,
    pub style: StyleSpec,
    pub motion_id: MotionId,
    pub clip_id: String,
}

impl SpriteClip {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Validation(format!(
                "clip {} has fewer than 2 frames",
                self.clip_id
            )));
        }
        let (h, w) = (self.frames[0].height(), self.frames[0].width());
        for (i, f) in self.frames.iter().enumerate() {
            if f.height() != h || f.width() != w {
                return Err(Error::Validation(format!(
                    "clip {} frame {i} has size {}x{}, expected {h}x{w}",
                    self.clip_id,
                    f.height(),
                    f.width()
                )));
            }
            f.validate()?;
        }
        Ok(())
    }
}

/// Nearest named hue for a palette color, used to build descriptive prompts.
pub fn color_name(rgb: [u8; 3]) -> &'static str {
    const NAMES: [(&str, [f32; 3]); 10] = [
        ("red", [0.85, 0.2, 0.2]),
        ("orange", [0.9, 0.55, 0.15]),
        ("yellow", [0.9, 0.85, 0.2]),
        ("green", [0.25, 0.7, 0.3]),
        ("teal", [0.2, 0.7, 0.65]),
        ("blue", [0.2, 0.35, 0.8]),
        ("purple", [0.55, 0.25, 0.75]),
        ("magenta", [0.85, 0.25, 0.65]),
        ("brown", [0.5, 0.35, 0.2]),
        ("gray", [0.5, 0.5, 0.5]),
    ];
    let p = [
        rgb[0] as f32 / 255.0,
        rgb[1] as f32 / 255.0,
        rgb[2] as f32 / 255.0,
    ];
    let mut best = NAMES[0].0;
    let mut best_d = f32::INFINITY;
    for (name, c) in NAMES {
        let d = (0..3).map(|i| (p[i] - c[i]).powi(2)).sum::<f32>();
        if d < best_d {
            best_d = d;
            best = name;
        }
    }
    best
}

pub(crate) fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let h6 = (h.fract() + 1.0).fract() * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}
