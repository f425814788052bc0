//! Scratch probe: two-stage vs direct, and the mu sweep, on the clip model.

use fairylab::adapters::{AdapterBank, AdapterRole, BankEntry, LowRankAdapter};
use fairylab::corpus::{generate_motion_clip, MotionId, SpriteClip, StyleSpec};
use fairylab::diffusion::*;
use fairylab::metrics::subject_consistency;
use fairylab::motion::{
    ablate_mu, animate_shot, clip_example, train_stage1_identity, train_stage2_motion,
    MotionTrainConfig, TimestepSampler,
};
use std::time::Instant;

fn arg(n: usize, default: usize) -> usize {
    std::env::args().nth(n).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() {
    let t0 = Instant::now();
    let schedule: NoiseSchedule<f32> = NoiseSchedule::linear(&ScheduleConfig {
        steps: 100,
        ..ScheduleConfig::default()
    })
    .unwrap();
    let frames = 8;
    let size = (32, 32);

    // mixed pretraining corpus: 4 styles x 4 motions
    let mut pretrain = Vec::new();
    let mut style0_clips: Vec<SpriteClip> = Vec::new();
    for style_id in 0..4u32 {
        let style = StyleSpec::from_id(style_id);
        for motion in MotionId::ALL {
            let clip =
                generate_motion_clip(&style, motion, frames, size, 100 + style_id as u64).unwrap();
            pretrain.push(clip_example(&clip));
            if style_id == 0 {
                style0_clips.push(clip);
            }
        }
    }

    let model: Denoiser<f32> = Denoiser::new(DenoiserConfig::clip(32, 32, frames), 7).unwrap();
    println!(
        "[{:6.1?}] clip model: {} params, {} tokens",
        t0.elapsed(),
        model.params().num_elements(),
        model.config.n_tokens()
    );
    let pre_steps = arg(1, 6000);
    let trainable: Vec<String> = model.params().names().map(String::from).collect();
    let mut opt = AdamState::new();
    let fit_cfg = FitConfig::new(pre_steps, 2e-3, 1, TimestepSampler::uniform(schedule.steps()));
    let report = fit(&model, &[], &pretrain, &trainable, &schedule, &fit_cfg, &mut opt, None).unwrap();
    println!(
        "[{:6.1?}] pretrain {pre_steps}: loss {:.4} -> {:.4}",
        t0.elapsed(),
        report.losses[..20].iter().sum::<f64>() / 20.0,
        report.losses[report.losses.len() - 20..].iter().sum::<f64>() / 20.0
    );

    let stage_steps = arg(2, 300);
    let n_seeds = arg(3, 3);
    let mode = arg(4, 0); // 0 = two-stage probe, 1 = mu probe

    // held-out conditioning frames for evaluation
    let eval_clips: Vec<SpriteClip> = MotionId::ALL
        .iter()
        .map(|&m| generate_motion_clip(&StyleSpec::from_id(0), m, frames, size, 999).unwrap())
        .collect();

    if mode == 0 {
        let mut margins = Vec::new();
        for seed in 0..n_seeds as u64 {
            let mcfg = MotionTrainConfig {
                stage1_steps: stage_steps,
                stage2_steps: stage_steps,
                dropout_p: 0.3,
                ..MotionTrainConfig::new(
                    seed,
                    stage_steps,
                    TimestepSampler::shifted(schedule.steps(), 6.0, 1.0),
                )
            };
            let mut opt1 = AdamState::new();
            let (mut bank, _) =
                train_stage1_identity(&model, &schedule, &style0_clips, &mcfg, &mut opt1).unwrap();
            let mut opt2 = AdamState::new();
            train_stage2_motion(&model, &schedule, &style0_clips, &mut bank, &mcfg, &mut opt2)
                .unwrap();

            // direct baseline: one adapter set, ordered frames, uniform
            // sampler, same total steps
            let mut direct = AdapterBank::new("motion");
            let mut rng = fairylab::util::stream_rng(seed, "direct-init");
            for site in model.sites() {
                if site.id == "time_embed" {
                    continue;
                }
                let ad = LowRankAdapter::init_lora(
                    &site.id,
                    site.in_dim,
                    site.out_dim,
                    mcfg.rank,
                    mcfg.dropout_p,
                    &mut rng,
                )
                .unwrap();
                direct
                    .insert(BankEntry {
                        role: AdapterRole::Identity,
                        enabled: true,
                        masked: false,
                        adapter: ad,
                        shared_a_key: None,
                    })
                    .unwrap();
            }
            let d_trainable: Vec<String> = direct
                .param_names_for_role(AdapterRole::Identity, ".a")
                .into_iter()
                .chain(direct.param_names_for_role(AdapterRole::Identity, ".b"))
                .collect();
            let d_examples: Vec<TrainExample<f32>> =
                style0_clips.iter().map(clip_example).collect();
            let d_cfg = FitConfig {
                steps: 2 * stage_steps,
                lr: mcfg.lr,
                seed,
                sampler: TimestepSampler::uniform(schedule.steps()),
                shuffle_frames: false,
                dora_eps_guard: None,
            };
            let mut d_opt = AdamState::new();
            fit(&model, &[&direct], &d_examples, &d_trainable, &schedule, &d_cfg, &mut d_opt, None)
                .unwrap();

            let score = |bank: &AdapterBank<f32>| -> f64 {
                let mut total = 0.0;
                for (i, ec) in eval_clips.iter().enumerate() {
                    let mut kw = ec.style.descriptive_phrase();
                    kw.push(ec.motion_id.keyword().to_string());
                    let frames_out = animate_shot(
                        &model,
                        &[bank],
                        &schedule,
                        &ec.frames[0].image,
                        &kw,
                        frames,
                        seed * 100 + i as u64,
                    )
                    .unwrap();
                    total += subject_consistency(&frames_out, None).unwrap();
                }
                total / eval_clips.len() as f64
            };
            let two = score(&bank);
            let dir = score(&direct);
            margins.push(two - dir);
            println!(
                "[{:6.1?}] seed {seed}: two-stage {two:.4}, direct {dir:.4}, margin {:+.4}",
                t0.elapsed(),
                two - dir
            );
        }
        let mean: f64 = margins.iter().sum::<f64>() / margins.len() as f64;
        println!("mean margin over {} seeds: {mean:+.4}", margins.len());
    } else {
        let holdout =
            generate_motion_clip(&StyleSpec::from_id(0), MotionId::WalkCycle, frames, size, 777)
                .unwrap();
        let seeds: Vec<u64> = (0..n_seeds as u64).collect();
        let mcfg = MotionTrainConfig {
            stage1_steps: stage_steps,
            stage2_steps: stage_steps,
            ..MotionTrainConfig::new(0, stage_steps, TimestepSampler::uniform(schedule.steps()))
        };
        let rows = ablate_mu(
            &model,
            &schedule,
            &style0_clips,
            &holdout,
            &[2.0, 4.0, 6.0],
            1.0,
            &seeds,
            &mcfg,
        )
        .unwrap();
        let mut by: std::collections::BTreeMap<String, (f64, f64)> = Default::default();
        for r in &rows {
            let e = by.entry(r.sampler.clone()).or_insert((0.0, 0.0));
            e.0 += r.recon_mse;
            e.1 += 1.0;
        }
        for (k, (sum, n)) in by {
            println!("[{:6.1?}] {k}: mean recon mse {:.5}", t0.elapsed(), sum / n);
        }
    }
}
