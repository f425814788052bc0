//! Scratch probe for tuning directional experiments. Not part of the suite.

use fairylab::adapters::AdapterBank;
use fairylab::corpus::{generate_motion_clip, MotionId, StyleSpec};
use fairylab::diffusion::*;
use fairylab::metrics::style_align_masked;
use fairylab::motion::TimestepSampler;
use fairylab::style::*;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let size = 32usize;
    let schedule_cfg = ScheduleConfig {
        steps: 100,
        ..ScheduleConfig::default()
    };
    let schedule: NoiseSchedule<f32> = NoiseSchedule::linear(&schedule_cfg).unwrap();

    // mixed corpus across 4 styles
    let mut pretrain_examples = Vec::new();
    let mut per_style_frames = Vec::new();
    for style_id in 0..4u32 {
        let style = StyleSpec::from_id(style_id);
        let mut frames = Vec::new();
        for motion in MotionId::ALL {
            let clip = generate_motion_clip(&style, motion, 8, (size, size), 100 + style_id as u64)
                .unwrap();
            let mut kw = style.descriptive_phrase();
            kw.push(motion.keyword().to_string());
            for f in &clip.frames {
                pretrain_examples.push(TrainExample {
                    target: Media::Image(encode_image(&f.image)),
                    keywords: kw.clone(),
                    pixel_mask: Some(f.mask.clone()),
                });
                frames.push(f.clone());
            }
        }
        per_style_frames.push(frames);
    }
    println!("[{:6.1?}] corpus built: {} frames", t0.elapsed(), pretrain_examples.len());

    let model_cfg = DenoiserConfig::image(size, size);
    let model: Denoiser<f32> = Denoiser::new(model_cfg, 7).unwrap();
    let trainable: Vec<String> = model.params().names().map(String::from).collect();
    let mut opt = AdamState::new();
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1500usize);
    let fit_cfg = FitConfig::new(steps, 3e-3, 1, TimestepSampler::uniform(schedule.steps()));
    let report = fit(
        &model,
        &[],
        &pretrain_examples,
        &trainable,
        &schedule,
        &fit_cfg,
        &mut opt,
        None,
    )
    .unwrap();
    println!(
        "[{:6.1?}] pretrain {} steps: loss {:.4} -> {:.4}",
        t0.elapsed(),
        steps,
        report.losses[..20.min(report.losses.len())].iter().sum::<f64>() / 20.0,
        report.losses[report.losses.len().saturating_sub(20)..].iter().sum::<f64>() / 20.0,
    );

    // style ablation probe on style 0..3
    let adapter_steps = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(400usize);
    let samples = 12;
    for style_id in 0..4u32 {
        let style = StyleSpec::from_id(style_id);
        let frames = &per_style_frames[style_id as usize];
        let reference = &frames[0];
        let prompt = style.descriptive_phrase();

        let mut scores = Vec::new();
        for variant in [
            StyleVariant::None,
            StyleVariant::Lora,
            StyleVariant::Dora,
            StyleVariant::PropagationMasked,
        ] {
            let bank = match variant {
                StyleVariant::None => AdapterBank::new(STYLE_BANK),
                _ => {
                    let scfg = StyleTrainConfig {
                        rank: 8,
                        dropout_p: 0.0,
                        variant: match variant {
                            StyleVariant::Lora => fairylab::adapters::AdapterVariant::Lora,
                            _ => fairylab::adapters::AdapterVariant::Dora,
                        },
                        masked: variant == StyleVariant::PropagationMasked,
                        steps: adapter_steps,
                        lr: 6e-3,
                        seed: 11,
                        sites: None,
                        dora_eps_guard: None,
                    };
                    let mut aopt = AdamState::new();
                    train_style_adapter(&model, &schedule, frames, &prompt, &scfg, &mut aopt)
                        .unwrap()
                        .0
                }
            };
            let mut kw = prompt.clone();
            kw.push("forest".to_string());
            let mut total = 0.0;
            for s in 0..samples {
                let scene = synthesize_scene(
                    &model,
                    &schedule,
                    &reference.image,
                    &reference.mask,
                    &kw,
                    &bank,
                    1000 + s,
                    None,
                )
                .unwrap();
                if s == 0 {
                    std::fs::create_dir_all("/tmp/probe").unwrap();
                    fairylab::corpus::frame_to_rgb8(&scene)
                        .save(format!("/tmp/probe/s{style_id}_{}.png", variant.label()))
                        .unwrap();
                }
                let bg = reference.mask.mapv(|m| 1 - m);
                total += style_align_masked(
                    &scene,
                    Some(&bg),
                    &reference.image,
                    Some(&reference.mask),
                );
            }
            scores.push((variant.label(), total / samples as f64));
        }
        println!(
            "[{:6.1?}] style {}: {:?}",
            t0.elapsed(),
            style_id,
            scores
        );
    }
}
