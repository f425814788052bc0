//! End-to-end story rendering: per shot, synthesize a styled scene behind
//! the character, crop it per the shot plan, and animate it with the
//! trained motion bank.

use super::geometry::{compute_crop, CropBox};
use super::{Perspective, Shot, Storyboard};
use crate::adapters::AdapterBank;
use crate::corpus::{character_bbox, motion_pose, render_character, StyleSpec};
use crate::corpus::frame_to_rgb8;
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::motion::animate_shot;
use crate::style::synthesize_scene;
use crate::util::stream_rng;
use ndarray::Array3;
use rand::Rng;
use std::fs;
use std::path::Path;

pub struct StoryAssets<'a> {
    pub image_model: &'a Denoiser<f32>,
    pub image_schedule: &'a NoiseSchedule<f32>,
    pub clip_model: &'a Denoiser<f32>,
    pub clip_schedule: &'a NoiseSchedule<f32>,
    pub style_bank: &'a AdapterBank<f32>,
    pub motion_bank: &'a AdapterBank<f32>,
    pub style: &'a StyleSpec,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ShotRecord {
    pub index: usize,
    pub dir: String,
    pub background: String,
    pub action: String,
    pub motion_id: String,
    pub shot_type: String,
    pub perspective: String,
    pub focal_region: String,
    pub crop_box: CropBox,
    pub frames: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StoryManifest {
    pub character: String,
    pub seed: u64,
    pub completed: usize,
    pub shots: Vec<ShotRecord>,
    pub error: Option<String>,
}

fn perspective_yaw(p: Perspective) -> f32 {
    match p {
        Perspective::Front => 0.0,
        Perspective::ThreeQuarter => std::f32::consts::FRAC_PI_4,
        Perspective::Side => std::f32::consts::FRAC_PI_2,
    }
}

/// Nearest-neighbor crop-and-resize of a normalized window.
pub fn crop_resize(scene: &Array3<f32>, crop: &CropBox, out_h: usize, out_w: usize) -> Array3<f32> {
    let (h, w, _) = scene.dim();
    let px = (crop.x * w as f64).round() as usize;
    let py = (crop.y * h as f64).round() as usize;
    let pw = ((crop.w * w as f64).round() as usize).max(1).min(w - px.min(w - 1));
    let ph = ((crop.h * h as f64).round() as usize).max(1).min(h - py.min(h - 1));
    Array3::from_shape_fn((out_h, out_w, 3), |(y, x, c)| {
        let sy = py + (y * ph) / out_h;
        let sx = px + (x * pw) / out_w;
        scene[[sy.min(h - 1), sx.min(w - 1), c]]
    })
}

fn write_shot_frames(dir: &Path, frames: &[Array3<f32>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        frame_to_rgb8(f).save(dir.join(format!("frame_{i:03}.png")))?;
    }
    // animated preview
    let file = fs::File::create(dir.join("preview.gif"))?;
    let mut encoder = image::codecs::gif::GifEncoder::new(file);
    encoder
        .set_repeat(image::codecs::gif::Repeat::Infinite)
        .map_err(image::ImageError::from)?;
    for f in frames {
        let rgb = frame_to_rgb8(f);
        let rgba = image::DynamicImage::ImageRgb8(rgb).to_rgba8();
        let frame = image::Frame::from_parts(
            rgba,
            0,
            0,
            image::Delay::from_numer_denom_ms(120, 1),
        );
        encoder.encode_frame(frame).map_err(image::ImageError::from)?;
    }
    Ok(())
}

fn render_one_shot(
    shot: &Shot,
    index: usize,
    assets: &StoryAssets<'_>,
    out_dir: &Path,
    seed: u64,
) -> Result<ShotRecord> {
    let shot_seed = stream_rng(seed, &format!("shot/{index}")).gen::<u64>();
    let img_cfg = &assets.image_model.config;

    // character in the shot's perspective, posed at the motion's first frame
    let mut pose = motion_pose(shot.motion_id, 0, assets.clip_model.config.frames);
    pose.yaw = perspective_yaw(shot.perspective);
    let character = render_character(
        assets.style,
        &pose,
        (img_cfg.height, img_cfg.width),
        shot_seed,
    )?;

    let mut keywords = assets.style.descriptive_phrase();
    keywords.push(shot.background.clone());
    let scene = synthesize_scene(
        assets.image_model,
        assets.image_schedule,
        &character.image,
        &character.mask,
        &keywords,
        assets.style_bank,
        shot_seed,
        None,
    )?;

    let bbox = character_bbox(&character.mask)
        .ok_or_else(|| Error::Validation("character mask is empty".into()))?;
    let crop = compute_crop(
        shot.shot_type,
        shot.focal_region,
        &CropBox {
            x: bbox.0,
            y: bbox.1,
            w: bbox.2,
            h: bbox.3,
        },
    )?;
    let clip_cfg = &assets.clip_model.config;
    let cropped = crop_resize(&scene, &crop, clip_cfg.height, clip_cfg.width);

    let mut motion_keywords = assets.style.descriptive_phrase();
    motion_keywords.push(shot.motion_id.keyword().to_string());
    let frames = animate_shot(
        assets.clip_model,
        &[assets.motion_bank],
        assets.clip_schedule,
        &cropped,
        &motion_keywords,
        clip_cfg.frames,
        shot_seed.wrapping_add(1),
    )?;

    let dir_name = format!("shot_{index:02}");
    write_shot_frames(&out_dir.join(&dir_name), &frames)?;
    Ok(ShotRecord {
        index,
        dir: dir_name,
        background: shot.background.clone(),
        action: shot.action.clone(),
        motion_id: shot.motion_id.keyword().to_string(),
        shot_type: serde_json::to_value(shot.shot_type)?
            .as_str()
            .unwrap_or("medium")
            .to_string(),
        perspective: serde_json::to_value(shot.perspective)?
            .as_str()
            .unwrap_or("front")
            .to_string(),
        focal_region: serde_json::to_value(shot.focal_region)?
            .as_str()
            .unwrap_or("full_body")
            .to_string(),
        crop_box: crop,
        frames: frames.len(),
    })
}

/// Render every shot in order, writing `shot_%02d/` frame directories and a
/// `story_manifest.json`. A failing shot aborts, with the manifest marking
/// the shots completed so far and the error.
pub fn render_story(
    storyboard: &Storyboard,
    assets: &StoryAssets<'_>,
    out_dir: &Path,
    seed: u64,
) -> Result<StoryManifest> {
    storyboard.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut manifest = StoryManifest {
        character: storyboard.global.character.clone(),
        seed,
        completed: 0,
        shots: Vec::new(),
        error: None,
    };
    for (i, shot) in storyboard.shots.iter().enumerate() {
        match render_one_shot(shot, i, assets, out_dir, seed) {
            Ok(record) => {
                manifest.shots.push(record);
                manifest.completed += 1;
            }
            Err(e) => {
                manifest.error = Some(e.to_string());
                fs::write(
                    out_dir.join("story_manifest.json"),
                    serde_json::to_string_pretty(&manifest)?,
                )?;
                return Err(e);
            }
        }
    }
    fs::write(
        out_dir.join("story_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_resize_identity_window_keeps_corner_pixels() {
        let scene = Array3::from_shape_fn((64, 64, 3), |(y, x, c)| {
            (y * 64 + x) as f32 * 0.0001 + c as f32
        });
        let out = crop_resize(&scene, &CropBox::full_frame(), 32, 32);
        assert_eq!(out[[0, 0, 0]], scene[[0, 0, 0]]);
        assert_eq!(out.dim(), (32, 32, 3));
    }

    #[test]
    fn crop_resize_quarter_window() {
        let scene = Array3::from_shape_fn((64, 64, 3), |(y, x, _)| (y * 64 + x) as f32);
        let crop = CropBox {
            x: 0.5,
            y: 0.5,
            w: 0.5,
            h: 0.5,
        };
        let out = crop_resize(&scene, &crop, 32, 32);
        assert_eq!(out[[0, 0, 0]], scene[[32, 32, 0]]);
    }
}
