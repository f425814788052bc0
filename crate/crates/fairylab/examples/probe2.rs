//! Scratch: single-image overfit sanity check.

use fairylab::corpus::{generate_motion_clip, MotionId, StyleSpec};
use fairylab::diffusion::*;
use fairylab::motion::TimestepSampler;

fn main() {
    let schedule: NoiseSchedule<f32> = NoiseSchedule::linear(&ScheduleConfig {
        steps: 100,
        ..ScheduleConfig::default()
    })
    .unwrap();
    let clip = generate_motion_clip(&StyleSpec::from_id(0), MotionId::Wave, 8, (32, 32), 5).unwrap();
    let example = TrainExample {
        target: Media::Image(encode_image(&clip.frames[0].image)),
        keywords: vec!["teal".to_string()],
        pixel_mask: None,
    };

    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-2);
    let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let embed: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(48);
    let depth: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(2);
    let patch: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(8);

    let mut cfg = DenoiserConfig::image(32, 32);
    cfg.embed = embed;
    cfg.hidden = embed * 2;
    cfg.depth = depth;
    cfg.patch = patch;
    let model: Denoiser<f32> = Denoiser::new(cfg, 7).unwrap();
    let trainable: Vec<String> = model.params().names().map(String::from).collect();
    let n_params: usize = model.params().num_elements();
    let mut opt = AdamState::new();
    let fit_cfg = FitConfig::new(steps, lr, 1, TimestepSampler::uniform(schedule.steps()));
    let report = fit(
        &model,
        &[],
        &[example],
        &trainable,
        &schedule,
        &fit_cfg,
        &mut opt,
        None,
    )
    .unwrap();
    let window = 50.min(report.losses.len());
    for k in 0..(report.losses.len() / 500).max(1) {
        let seg = &report.losses[k * 500..((k + 1) * 500).min(report.losses.len())];
        let mean: f64 = seg.iter().sum::<f64>() / seg.len() as f64;
        println!("steps {:5}..: mean loss {mean:.4}", k * 500);
    }
    let last: f64 =
        report.losses[report.losses.len() - window..].iter().sum::<f64>() / window as f64;
    println!("params {n_params}, final mean loss {last:.4}");
}
