//! Style propagation: train a low-rank adapter on foreground tokens of one
//! character's frames, then inpaint style-consistent backgrounds behind the
//! preserved character with the adapter applied to background tokens only.

use crate::adapters::{AdapterBank, AdapterRole, AdapterVariant, BankEntry, LowRankAdapter};
use crate::corpus::{SpriteClip, SpriteFrame};
use crate::diffusion::{
    decode_image, encode_image, fit, sample, AdamState, Denoiser, FitConfig, FitReport,
    InpaintRef, InputKind, Media, NoiseSchedule, SampleArgs, TrainExample,
};
use crate::error::{Error, Result};
use crate::metrics::{style_align_masked, KeywordClassifier};
use crate::util::stream_rng;
use ndarray::{Array2, Array3};

pub const STYLE_BANK: &str = "style";

#[derive(Debug, Clone)]
pub struct StyleTrainConfig {
    pub rank: usize,
    pub dropout_p: f64,
    pub variant: AdapterVariant,
    /// Propagation masking: train on foreground tokens, infer on background.
    pub masked: bool,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Install sites; None = every token-wise site.
    pub sites: Option<Vec<String>>,
    pub dora_eps_guard: Option<f64>,
}

impl StyleTrainConfig {
    pub fn propagation(seed: u64, steps: usize) -> StyleTrainConfig {
        StyleTrainConfig {
            rank: 4,
            dropout_p: 0.0,
            variant: AdapterVariant::Dora,
            masked: true,
            steps,
            lr: 2e-3,
            seed,
            sites: None,
            dora_eps_guard: None,
        }
    }
}

/// Frames of one style drawn from clips (style is a per-frame property).
pub fn style_frames(clips: &[SpriteClip], style_id: u32) -> Vec<SpriteFrame> {
    clips
        .iter()
        .filter(|c| c.style.style_id == style_id)
        .flat_map(|c| c.frames.iter().cloned())
        .collect()
}

fn build_style_bank(
    model: &Denoiser<f32>,
    cfg: &StyleTrainConfig,
) -> Result<AdapterBank<f32>> {
    let mut bank = AdapterBank::new(STYLE_BANK);
    let mut rng = stream_rng(cfg.seed, "style-init");
    let sites = match &cfg.sites {
        Some(s) => s.clone(),
        None => model.token_wise_sites(),
    };
    for site_id in sites {
        let site = model
            .site(&site_id)
            .ok_or_else(|| Error::Validation(format!("unknown site {site_id}")))?;
        if cfg.masked && !site.token_wise {
            return Err(Error::Validation(format!(
                "propagation adapter not installable at non-token site {site_id}"
            )));
        }
        let adapter = match cfg.variant {
            AdapterVariant::Lora => LowRankAdapter::init_lora(
                &site.id,
                site.in_dim,
                site.out_dim,
                cfg.rank,
                cfg.dropout_p,
                &mut rng,
            )?,
            AdapterVariant::Dora => {
                let w = model
                    .params()
                    .get(&format!("{}.w", site.id))
                    .expect("site weight")
                    .borrow()
                    .clone();
                LowRankAdapter::init_dora(&site.id, &w, cfg.rank, cfg.dropout_p, &mut rng)?
            }
        };
        bank.insert(BankEntry {
            role: AdapterRole::Style,
            enabled: true,
            masked: cfg.masked,
            adapter,
            shared_a_key: None,
        })?;
    }
    Ok(bank)
}

fn style_trainable(bank: &AdapterBank<f32>, variant: AdapterVariant) -> Vec<String> {
    let mut names = bank.param_names_for_role(AdapterRole::Style, ".a");
    names.extend(bank.param_names_for_role(AdapterRole::Style, ".b"));
    if variant == AdapterVariant::Dora {
        names.extend(bank.param_names_for_role(AdapterRole::Style, ".g"));
    }
    names
}

/// Train a style adapter bank on masked frames of one style, conditioned on
/// a descriptive prompt. Base weights stay frozen (enforced by `fit`).
pub fn train_style_adapter(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule<f32>,
    frames: &[SpriteFrame],
    prompt: &[String],
    cfg: &StyleTrainConfig,
    opt: &mut AdamState<f32>,
) -> Result<(AdapterBank<f32>, FitReport)> {
    if model.config.kind != InputKind::Image {
        return Err(Error::Validation("style training needs an image-mode model".into()));
    }
    if frames.is_empty() {
        return Err(Error::Validation("style training needs >= 1 frame".into()));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.foreground_count() == 0 {
            return Err(Error::Validation(format!(
                "frame {i} has an empty mask; unmasked frames are rejected"
            )));
        }
        if (f.height(), f.width()) != (model.config.height, model.config.width) {
            return Err(Error::Validation(format!(
                "frame {i} is {}x{}, model wants {}x{}",
                f.height(),
                f.width(),
                model.config.height,
                model.config.width
            )));
        }
    }

    let bank = build_style_bank(model, cfg)?;
    let trainable = style_trainable(&bank, cfg.variant);
    let examples: Vec<TrainExample<f32>> = frames
        .iter()
        .map(|f| TrainExample {
            target: Media::Image(encode_image(&f.image)),
            keywords: prompt.to_vec(),
            pixel_mask: Some(f.mask.clone()),
        })
        .collect();
    let fit_cfg = FitConfig {
        steps: cfg.steps,
        lr: cfg.lr,
        seed: cfg.seed,
        sampler: crate::motion::TimestepSampler::uniform(schedule.steps()),
        shuffle_frames: false,
        dora_eps_guard: cfg.dora_eps_guard,
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

/// Inpaint a style-consistent background behind the character. The
/// foreground is preserved exactly; the adapter acts on background tokens.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_scene(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule<f32>,
    character01: &Array3<f32>,
    mask: &Array2<u8>,
    keywords: &[String],
    bank: &AdapterBank<f32>,
    seed: u64,
    dora_eps_guard: Option<f64>,
) -> Result<Array3<f32>> {
    if character01.dim().0 != mask.dim().0 || character01.dim().1 != mask.dim().1 {
        return Err(Error::Shape(format!(
            "mask {:?} does not match frame {:?}",
            mask.dim(),
            character01.dim()
        )));
    }
    let reference = encode_image::<f32>(character01);
    let args = SampleArgs {
        keywords,
        cond_frame: None,
        inpaint: Some(InpaintRef {
            reference: &reference,
            pixel_mask: mask,
        }),
        clamp_first_frame: false,
        dora_eps_guard,
    };
    let mut rng = stream_rng(seed, "scene");
    let out = sample(model, &[bank], schedule, &args, &mut rng)?;
    Ok(decode_image(out.frame(0)))
}

/// Adapter variants compared by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StyleVariant {
    /// No adapter: the base model alone.
    None,
    /// Plain LoRA, unmasked.
    Lora,
    /// Plain DoRA, unmasked.
    Dora,
    /// The propagation adapter: masked DoRA.
    PropagationMasked,
}

impl StyleVariant {
    pub fn label(&self) -> &'static str {
        match self {
            StyleVariant::None => "none",
            StyleVariant::Lora => "lora",
            StyleVariant::Dora => "dora",
            StyleVariant::PropagationMasked => "propagation-masked",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct VariantRow {
    pub variant: String,
    pub style_align: f64,
    pub text_align: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub steps: usize,
    pub lr: f64,
    pub rank: usize,
    pub seed: u64,
    /// Scenes sampled per variant.
    pub samples: usize,
    pub background: String,
}

/// Train each variant identically, synthesize scenes with shared seeds, and
/// score style alignment (background region vs the style's foreground
/// reference) and text alignment (classifier proxy on the full scene).
#[allow(clippy::too_many_arguments)]
pub fn compare_adapter_variants(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule<f32>,
    train_frames: &[SpriteFrame],
    reference: &SpriteFrame,
    prompt: &[String],
    variants: &[StyleVariant],
    classifier: &KeywordClassifier,
    cfg: &AblationConfig,
) -> Result<Vec<VariantRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let bank = match variant {
            StyleVariant::None => AdapterBank::new(STYLE_BANK),
            _ => {
                let style_cfg = StyleTrainConfig {
                    rank: cfg.rank,
                    dropout_p: 0.0,
                    variant: match variant {
                        StyleVariant::Lora => AdapterVariant::Lora,
                        _ => AdapterVariant::Dora,
                    },
                    masked: matches!(variant, StyleVariant::PropagationMasked),
                    steps: cfg.steps,
                    lr: cfg.lr,
                    seed: cfg.seed,
                    sites: None,
                    dora_eps_guard: None,
                };
                let mut opt = AdamState::new();
                train_style_adapter(model, schedule, train_frames, prompt, &style_cfg, &mut opt)?
                    .0
            }
        };

        let mut keywords = prompt.to_vec();
        keywords.push(cfg.background.clone());
        let mut style_sum = 0.0;
        let mut text_sum = 0.0;
        for s in 0..cfg.samples {
            let scene = synthesize_scene(
                model,
                schedule,
                &reference.image,
                &reference.mask,
                &keywords,
                &bank,
                cfg.seed.wrapping_add(s as u64),
                None,
            )?;
            let bg_mask = reference.mask.mapv(|m| 1 - m);
            style_sum += style_align_masked(
                &scene,
                Some(&bg_mask),
                &reference.image,
                Some(&reference.mask),
            );
            text_sum += classifier.score(&scene, &keywords)?;
        }
        rows.push(VariantRow {
            variant: variant.label().to_string(),
            style_align: style_sum / cfg.samples as f64,
            text_align: text_sum / cfg.samples as f64,
            seed: cfg.seed,
        });
    }
    Ok(rows)
}
