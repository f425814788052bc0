//! Stage 1: identity factors on temporally shuffled frames. Stage 2: a
//! motion residual on ordered frames with the identity factors frozen and
//! the up factor shared by reference, trained under a shifted timestep
//! sampler.

use super::sampler::TimestepSampler;
use crate::adapters::{AdapterBank, AdapterRole, BankEntry, LowRankAdapter};
use crate::corpus::SpriteClip;
use crate::diffusion::{
    encode_image, fit, sample, AdamState, Denoiser, FitConfig, FitReport, InputKind, Media,
    NoiseSchedule, SampleArgs, TrainExample,
};
use crate::error::{Error, Result};
use crate::metrics::{motion_smoothness, subject_consistency};
use crate::params::shared;
use crate::util::stream_rng;
use ndarray::{Array2, Array3};
use std::rc::Rc;

pub const MOTION_BANK: &str = "motion";

#[derive(Debug, Clone)]
pub struct MotionTrainConfig {
    pub rank: usize,
    pub dropout_p: f64,
    pub lr: f64,
    pub seed: u64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Stage 1 trains on freshly permuted frames; must stay true.
    pub stage1_shuffle: bool,
    /// Stage 2 trains on the original temporal order; must stay false.
    pub stage2_shuffle: bool,
    pub stage2_sampler: TimestepSampler,
    /// Insertion sites; None installs at every site except `time_embed`.
    pub sites: Option<Vec<String>>,
}

impl MotionTrainConfig {
    pub fn new(seed: u64, steps: usize, sampler: TimestepSampler) -> MotionTrainConfig {
        MotionTrainConfig {
            rank: 4,
            dropout_p: 0.1,
            lr: 2e-3,
            seed,
            stage1_steps: steps,
            stage2_steps: steps,
            stage1_shuffle: true,
            stage2_shuffle: false,
            stage2_sampler: sampler,
            sites: None,
        }
    }

    fn install_sites(&self, model: &Denoiser<f32>) -> Vec<String> {
        match &self.sites {
            Some(s) => s.clone(),
            None => model
                .sites()
                .iter()
                .filter(|s| s.id != "time_embed")
                .map(|s| s.id.clone())
                .collect(),
        }
    }
}

/// Clip to training example: encoded frames plus its descriptive keywords.
pub fn clip_example(clip: &SpriteClip) -> TrainExample<f32> {
    let frames: Vec<Array3<f32>> = clip.frames.iter().map(|f| encode_image(&f.image)).collect();
    let mut keywords = clip.style.descriptive_phrase();
    keywords.push(clip.motion_id.keyword().to_string());
    TrainExample {
        target: Media::Clip(frames),
        keywords,
        pixel_mask: None,
    }
}

fn validate_clips(model: &Denoiser<f32>, clips: &[SpriteClip]) -> Result<()> {
    if clips.is_empty() {
        return Err(Error::Validation("motion training needs >= 1 clip".into()));
    }
    if model.config.kind != InputKind::Clip {
        return Err(Error::Validation("motion training needs a clip-mode model".into()));
    }
    for clip in clips {
        clip.validate()?;
        let (h, w) = (clip.frames[0].height(), clip.frames[0].width());
        if (h, w) != (model.config.height, model.config.width)
            || clip.frames.len() != model.config.frames
        {
            return Err(Error::Validation(format!(
                "clip {} is {h}x{w} x{} frames; model wants {}x{} x{}",
                clip.clip_id,
                clip.frames.len(),
                model.config.height,
                model.config.width,
                model.config.frames
            )));
        }
    }
    Ok(())
}

/// Stage 1: train identity factors (`A_id`, `B_id`) on shuffled frames with
/// a uniform timestep sampler. Base weights stay frozen.
pub fn train_stage1_identity(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule<f32>,
    clips: &[SpriteClip],
    cfg: &MotionTrainConfig,
    opt: &mut AdamState<f32>,
) -> Result<(AdapterBank<f32>, FitReport)> {
    validate_clips(model, clips)?;
    if !cfg.stage1_shuffle {
        return Err(Error::Validation(
            "stage 1 must train on shuffled frames (stage1_shuffle = true)".into(),
        ));
    }
    let mut bank = AdapterBank::new(MOTION_BANK);
    let mut rng = stream_rng(cfg.seed, "stage1-init");
    for site_id in cfg.install_sites(model) {
        let site = model
            .site(&site_id)
            .ok_or_else(|| Error::Validation(format!("unknown site {site_id}")))?;
        let adapter = LowRankAdapter::init_lora(
            &site.id,
            site.in_dim,
            site.out_dim,
            cfg.rank,
            cfg.dropout_p,
            &mut rng,
        )?;
        bank.insert(BankEntry {
            role: AdapterRole::Identity,
            enabled: true,
            masked: false,
            adapter,
            shared_a_key: Some(site.id.replace('.', "_") + "_a"),
        })?;
    }

    let trainable: Vec<String> = bank
        .param_names_for_role(AdapterRole::Identity, ".a")
        .into_iter()
        .chain(bank.param_names_for_role(AdapterRole::Identity, ".b"))
        .collect();
    let examples: Vec<TrainExample<f32>> = clips.iter().map(clip_example).collect();
    let fit_cfg = FitConfig {
        steps: cfg.stage1_steps,
        lr: cfg.lr,
        seed: cfg.seed,
        sampler: TimestepSampler::uniform(schedule.steps()),
        shuffle_frames: true,
        dora_eps_guard: None,
    };
    let report = fit(
        model,
        &[&bank],
        &examples,
        &trainable,
        schedule,
        &fit_cfg,
        opt,
        None,
    )?;
    Ok((bank, report))
}

/// Stage 2: freeze identity, add `B_motion` residual factors that alias the
/// identity up factor, and train them on ordered frames with the given
/// (typically late-biased) sampler.
pub fn train_stage2_motion(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule<f32>,
    clips: &[SpriteClip],
    bank: &mut AdapterBank<f32>,
    cfg: &MotionTrainConfig,
    opt: &mut AdamState<f32>,
) -> Result<FitReport> {
    validate_clips(model, clips)?;
    if cfg.stage2_shuffle {
        return Err(Error::Validation(
            "stage 2 trains on ordered frames (stage2_shuffle must be false)".into(),
        ));
    }
    cfg.stage2_sampler.validate()?;
    let identities: Vec<(String, usize, usize)> = bank
        .entries()
        .iter()
        .filter(|e| e.role == AdapterRole::Identity)
        .map(|e| {
            (
                e.adapter.site_id.clone(),
                e.adapter.in_dim(),
                e.adapter.rank,
            )
        })
        .collect();
    if identities.is_empty() {
        return Err(Error::Validation(
            "stage 2 requires a stage-1 identity bank".into(),
        ));
    }
    if bank.entries().iter().any(|e| e.role == AdapterRole::Motion) {
        return Err(Error::Validation("bank already has motion adapters".into()));
    }

    for (site_id, in_dim, rank) in identities {
        let (id_a, shared_key) = {
            let e = bank
                .at_site(&site_id)
                .find(|e| e.role == AdapterRole::Identity)
                .expect("identity present");
            (Rc::clone(&e.adapter.a), e.shared_a_key.clone())
        };
        // residual starts at zero: stage-2 output equals stage-1 output
        let adapter = LowRankAdapter {
            site_id: site_id.clone(),
            rank,
            dropout_p: cfg.dropout_p,
            variant: crate::adapters::AdapterVariant::Lora,
            a: id_a,
            b: shared(Array2::zeros((in_dim, rank))),
            dora_magnitude: None,
        };
        bank.insert(BankEntry {
            role: AdapterRole::Motion,
            enabled: true,
            masked: false,
            adapter,
            shared_a_key: shared_key,
        })?;
    }

    let trainable = bank.param_names_for_role(AdapterRole::Motion, ".b");
    let examples: Vec<TrainExample<f32>> = clips.iter().map(clip_example).collect();
    let fit_cfg = FitConfig {
        steps: cfg.stage2_steps,
        lr: cfg.lr,
        seed: cfg.seed.wrapping_add(1),
        sampler: cfg.stage2_sampler,
        shuffle_frames: false,
        dora_eps_guard: None,
    };
    fit(
        model,
        &[&*bank],
        &examples,
        &trainable,
        schedule,
        &fit_cfg,
        opt,
        None,
    )
}

/// Image-to-video: sample a clip conditioned on `scene01` as the first
/// frame. Returns `model.config.frames` frames in `[0, 1]`.
pub fn animate_shot(
    model: &Denoiser<f32>,
    banks: &[&AdapterBank<f32>],
    schedule: &NoiseSchedule<f32>,
    scene01: &Array3<f32>,
    keywords: &[String],
    frame_count: usize,
    seed: u64,
) -> Result<Vec<Array3<f32>>> {
    if model.config.kind != InputKind::Clip {
        return Err(Error::Validation("animate_shot needs a clip-mode model".into()));
    }
    if scene01.dim() != (model.config.height, model.config.width, 3) {
        return Err(Error::Validation(format!(
            "scene resolution {:?} does not match model {}x{}",
            scene01.dim(),
            model.config.height,
            model.config.width
        )));
    }
    if frame_count != model.config.frames {
        return Err(Error::Validation(format!(
            "requested {frame_count} frames; model generates {}",
            model.config.frames
        )));
    }
    let cond = encode_image::<f32>(scene01);
    let args = SampleArgs {
        keywords,
        cond_frame: Some(&cond),
        inpaint: None,
        clamp_first_frame: true,
        dora_eps_guard: None,
    };
    let mut rng = stream_rng(seed, "animate");
    let out = sample(model, banks, schedule, &args, &mut rng)?;
    Ok((0..out.frames())
        .map(|i| crate::diffusion::decode_image(out.frame(i)))
        .collect())
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MuAblationRow {
    /// "uniform" or "mu=<value>".
    pub sampler: String,
    pub mu: Option<f64>,
    pub recon_mse: f64,
    pub smoothness: f64,
    pub consistency: f64,
    pub seed: u64,
}

/// One full stage-2 run per shifted `mu` plus a uniform baseline, per seed.
/// Stage 1 is trained once per seed and forked for each arm; the generation
/// noise stream is shared across arms so rows differ only by the sampler.
#[allow(clippy::too_many_arguments)]
pub fn ablate_mu(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule<f32>,
    train_clips: &[SpriteClip],
    holdout: &SpriteClip,
    mus: &[f64],
    sigma: f64,
    seeds: &[u64],
    base_cfg: &MotionTrainConfig,
) -> Result<Vec<MuAblationRow>> {
    holdout.validate()?;
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut cfg = base_cfg.clone();
        cfg.seed = seed;
        let mut opt = AdamState::new();
        let (stage1, _) = train_stage1_identity(model, schedule, train_clips, &cfg, &mut opt)?;

        let mut arms: Vec<(String, Option<f64>, TimestepSampler)> = vec![(
            "uniform".to_string(),
            None,
            TimestepSampler::uniform(schedule.steps()),
        )];
        for &mu in mus {
            arms.push((
                format!("mu={mu}"),
                Some(mu),
                TimestepSampler::shifted(schedule.steps(), mu, sigma),
            ));
        }

        for (label, mu, sampler) in arms {
            let mut bank = stage1.deep_clone();
            let mut arm_cfg = cfg.clone();
            arm_cfg.stage2_sampler = sampler;
            let mut arm_opt = AdamState::new();
            train_stage2_motion(model, schedule, train_clips, &mut bank, &arm_cfg, &mut arm_opt)?;

            let first = holdout.frames[0].image.clone();
            let mut keywords = holdout.style.descriptive_phrase();
            keywords.push(holdout.motion_id.keyword().to_string());
            // same generation stream for every arm of this seed
            let gen_seed = seed;
            let frames = animate_shot(
                model,
                &[&bank],
                schedule,
                &first,
                &keywords,
                model.config.frames,
                gen_seed,
            )?;

            // held-out reconstruction over the generated frames (frame 0 is
            // clamped to the conditioning scene, so score frames 1..)
            let mut mse = 0.0f64;
            let mut n = 0.0f64;
            for (k, frame) in frames.iter().enumerate().skip(1) {
                for (a, b) in frame.iter().zip(holdout.frames[k].image.iter()) {
                    let d = *a as f64 - *b as f64;
                    mse += d * d;
                    n += 1.0;
                }
            }
            mse /= n;
            let smoothness = motion_smoothness(&frames)?;
            let consistency = subject_consistency(&frames, None)?;
            rows.push(MuAblationRow {
                sampler: label,
                mu,
                recon_mse: mse,
                smoothness,
                consistency,
                seed,
            });
        }
    }
    Ok(rows)
}
