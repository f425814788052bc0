//! Subcommand execution: each run resolves its config, executes under a
//! run-id directory, and records a manifest. Nothing here mutates another
//! run's artifacts.

use crate::adapters::{load_bank, save_bank, AdapterBank, AdapterVariant};
use crate::config::Config;
use crate::corpus::{
    generate_corpus, generate_motion_clip, load_corpus, render_character, CorpusConfig,
    LoadedClip, MotionId, PoseParams, StyleSpec,
};
use crate::diffusion::{
    encode_image, fit, load_checkpoint, new_manifest, save_checkpoint, AdamState, Denoiser,
    DenoiserConfig, InputKind, Media, NoiseSchedule, ScheduleConfig, TrainExample,
};
use crate::error::{Error, Result};
use crate::metrics::KeywordClassifier;
use crate::motion::{
    ablate_mu, train_stage1_identity, train_stage2_motion, MotionTrainConfig, TimestepSampler,
};
use crate::report::{emit_report, image_grid};
use crate::runs::{derive_run_id, git_describe, run_root, write_manifest, RunManifest};
use crate::storyboard::{
    plan_storyboard, render_story, HttpPlanner, PlannerClient, StoryAssets, Storyboard,
    StubPlanner,
};
use crate::style::{
    compare_adapter_variants, style_frames, synthesize_scene, train_style_adapter,
    AblationConfig, StyleTrainConfig, StyleVariant,
};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    CorpusGen { overwrite: bool },
    PretrainImage,
    PretrainClip,
    StyleTrain,
    StyleSynth,
    StyleAblate,
    MotionStage1,
    MotionStage2,
    AblateMu,
    StoryPlan,
    StoryRender,
    Report { runs: Vec<PathBuf> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CorpusGen { .. } => "corpus-gen",
            Command::PretrainImage => "pretrain-image",
            Command::PretrainClip => "pretrain-clip",
            Command::StyleTrain => "style-train",
            Command::StyleSynth => "style-synth",
            Command::StyleAblate => "style-ablate",
            Command::MotionStage1 => "motion-stage1",
            Command::MotionStage2 => "motion-stage2",
            Command::AblateMu => "ablate-mu",
            Command::StoryPlan => "story-plan",
            Command::StoryRender => "story-render",
            Command::Report { .. } => "report",
        }
    }
}

pub struct RunArgs {
    pub command: Command,
    pub config: Config,
    pub run_id: Option<String>,
    /// Artifact root; defaults to `RUN_DIR` or `./runs`.
    pub run_root: Option<PathBuf>,
}

/// Execute one subcommand under its run directory; returns that directory.
pub fn run(args: RunArgs) -> Result<PathBuf> {
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| derive_run_id(args.command.name(), &args.config));
    let root = args.run_root.clone().unwrap_or_else(run_root);
    let run_dir = root.join(&run_id);
    fs::create_dir_all(&run_dir)?;
    let started = Instant::now();
    let artifacts = execute(&args.command, &args.config, &run_dir)?;
    let manifest = RunManifest {
        subcommand: args.command.name().to_string(),
        config: args.config,
        git_describe: git_describe(),
        wall_time_ms: started.elapsed().as_millis() as u64,
        artifacts,
    };
    write_manifest(&run_dir, &manifest)?;
    Ok(run_dir)
}

fn required_path(value: &str, key: &str) -> Result<PathBuf> {
    if value.is_empty() {
        return Err(Error::Config(format!(
            "paths.{key} is required for this subcommand"
        )));
    }
    Ok(PathBuf::from(value))
}

fn schedule_of(cfg: &Config) -> Result<NoiseSchedule<f32>> {
    NoiseSchedule::linear(&ScheduleConfig {
        steps: cfg.schedule.steps,
        beta_start: cfg.schedule.beta_start,
        beta_end: cfg.schedule.beta_end,
    })
}

fn image_model_config(cfg: &Config) -> DenoiserConfig {
    let m = &cfg.model.image;
    DenoiserConfig {
        kind: InputKind::Image,
        height: m.height,
        width: m.width,
        patch: m.patch,
        embed: m.embed,
        hidden: m.hidden,
        depth: m.depth,
        frames: 1,
        time_features: 16,
    }
}

fn clip_model_config(cfg: &Config) -> DenoiserConfig {
    let m = &cfg.model.clip;
    DenoiserConfig {
        kind: InputKind::Clip,
        height: m.height,
        width: m.width,
        patch: m.patch,
        embed: m.embed,
        hidden: m.hidden,
        depth: m.depth,
        frames: m.frames,
        time_features: 16,
    }
}

/// Every frame of every clip as an image example with its style phrase and
/// motion keyword.
fn image_examples(clips: &[LoadedClip]) -> Vec<TrainExample<f32>> {
    let mut out = Vec::new();
    for lc in clips {
        let mut keywords = lc.clip.style.descriptive_phrase();
        keywords.push(lc.clip.motion_id.keyword().to_string());
        for f in &lc.clip.frames {
            out.push(TrainExample {
                target: Media::Image(encode_image(&f.image)),
                keywords: keywords.clone(),
                pixel_mask: Some(f.mask.clone()),
            });
        }
    }
    out
}

fn clip_examples(clips: &[LoadedClip]) -> Vec<TrainExample<f32>> {
    clips
        .iter()
        .map(|lc| crate::motion::clip_example(&lc.clip))
        .collect()
}

fn check_corpus_size(clips: &[LoadedClip], h: usize, w: usize) -> Result<()> {
    match clips.first() {
        Some(lc) if lc.entry.height == h && lc.entry.width == w => Ok(()),
        Some(lc) => Err(Error::Validation(format!(
            "corpus is {}x{}, model expects {h}x{w}",
            lc.entry.height, lc.entry.width
        ))),
        None => Err(Error::Validation("corpus is empty".into())),
    }
}

fn style_clips(clips: &[LoadedClip], style_id: u32) -> Vec<crate::corpus::SpriteClip> {
    clips
        .iter()
        .filter(|lc| lc.entry.style_id == style_id)
        .map(|lc| lc.clip.clone())
        .collect()
}

fn execute(cmd: &Command, cfg: &Config, run_dir: &Path) -> Result<Vec<String>> {
    match cmd {
        Command::CorpusGen { overwrite } => {
            let out = run_dir.join("corpus");
            let corpus_cfg = CorpusConfig {
                n_styles: cfg.corpus.n_styles,
                clips_per_style: cfg.corpus.clips_per_style,
                frames: cfg.corpus.frames,
                height: cfg.corpus.height,
                width: cfg.corpus.width,
                seed: cfg.corpus.seed,
            };
            let index = generate_corpus(&out, &corpus_cfg, *overwrite)?;
            log::info!("wrote {} clips to {}", index.clips.len(), out.display());
            Ok(vec!["corpus/index.json".into()])
        }

        Command::PretrainImage | Command::PretrainClip => {
            let corpus_dir = required_path(&cfg.paths.corpus, "corpus")?;
            let clips = load_corpus(&corpus_dir)?;
            let is_image = matches!(cmd, Command::PretrainImage);
            let model_cfg = if is_image {
                image_model_config(cfg)
            } else {
                clip_model_config(cfg)
            };
            check_corpus_size(&clips, model_cfg.height, model_cfg.width)?;
            let model: Denoiser<f32> = Denoiser::new(model_cfg.clone(), cfg.pretrain.seed)?;
            let schedule = schedule_of(cfg)?;
            let examples = if is_image {
                image_examples(&clips)
            } else {
                clip_examples(&clips)
            };
            let trainable: Vec<String> = model.params().names().map(String::from).collect();
            let mut opt = AdamState::new();
            let fit_cfg = crate::diffusion::FitConfig::new(
                cfg.pretrain.steps,
                cfg.pretrain.lr,
                cfg.pretrain.seed,
                TimestepSampler::uniform(cfg.schedule.steps),
            );
            let report = fit(
                &model, &[], &examples, &trainable, &schedule, &fit_cfg, &mut opt, None,
            )?;
            let mut manifest = new_manifest(
                &model_cfg,
                &ScheduleConfig {
                    steps: cfg.schedule.steps,
                    beta_start: cfg.schedule.beta_start,
                    beta_end: cfg.schedule.beta_end,
                },
                cfg.pretrain.seed,
            );
            manifest.step = report.losses.len();
            manifest.loss_history = report.losses.clone();
            manifest.set_rng_word_pos(report.rng_word_pos);
            manifest.trainable = trainable;
            save_checkpoint(&run_dir.join("checkpoint"), &model, &[], &opt, &manifest)?;
            Ok(vec![
                "checkpoint/manifest.json".into(),
                "checkpoint/tensors.bin".into(),
            ])
        }

        Command::StyleTrain => {
            let clips = load_corpus(&required_path(&cfg.paths.corpus, "corpus")?)?;
            let (model, _, _, ckpt_manifest) =
                load_checkpoint(&required_path(&cfg.paths.image_checkpoint, "image_checkpoint")?)?;
            let schedule = NoiseSchedule::linear(&ckpt_manifest.schedule)?;
            check_corpus_size(&clips, model.config.height, model.config.width)?;
            let style = StyleSpec::from_id(cfg.style.style_id);
            let frames = style_frames(&style_clips(&clips, cfg.style.style_id), cfg.style.style_id);
            if frames.is_empty() {
                return Err(Error::Validation(format!(
                    "corpus has no clips of style {}",
                    cfg.style.style_id
                )));
            }
            let style_cfg = StyleTrainConfig {
                rank: cfg.style.rank,
                dropout_p: cfg.style.dropout_p,
                variant: if cfg.style.variant == "lora" {
                    AdapterVariant::Lora
                } else {
                    AdapterVariant::Dora
                },
                masked: cfg.style.masked,
                steps: cfg.style.steps,
                lr: cfg.style.lr,
                seed: cfg.style.seed,
                sites: None,
                dora_eps_guard: None,
            };
            let mut opt = AdamState::new();
            let prompt = style.descriptive_phrase();
            let (bank, report) =
                train_style_adapter(&model, &schedule, &frames, &prompt, &style_cfg, &mut opt)?;
            save_bank(&run_dir.join("style_bank"), &bank)?;
            fs::write(
                run_dir.join("train_log.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "losses": report.losses,
                    "prompt": prompt,
                }))?,
            )?;
            Ok(vec![
                "style_bank/adapters.json".into(),
                "style_bank/tensors.bin".into(),
                "train_log.json".into(),
            ])
        }

        Command::StyleSynth => {
            let (model, _, _, ckpt_manifest) =
                load_checkpoint(&required_path(&cfg.paths.image_checkpoint, "image_checkpoint")?)?;
            let schedule = NoiseSchedule::linear(&ckpt_manifest.schedule)?;
            let bank = load_bank(&required_path(&cfg.paths.style_bank, "style_bank")?)?;
            let style = StyleSpec::from_id(cfg.style.style_id);
            let frame = render_character(
                &style,
                &PoseParams::default(),
                (model.config.height, model.config.width),
                cfg.style.seed,
            )?;
            let mut keywords = style.descriptive_phrase();
            keywords.push(cfg.style.background.clone());
            let scene = synthesize_scene(
                &model,
                &schedule,
                &frame.image,
                &frame.mask,
                &keywords,
                &bank,
                cfg.style.seed,
                None,
            )?;
            crate::corpus::frame_to_rgb8(&frame.image).save(run_dir.join("character.png"))?;
            crate::corpus::frame_to_rgb8(&scene).save(run_dir.join("scene.png"))?;
            Ok(vec!["character.png".into(), "scene.png".into()])
        }

        Command::StyleAblate => {
            let clips = load_corpus(&required_path(&cfg.paths.corpus, "corpus")?)?;
            let (model, _, _, ckpt_manifest) =
                load_checkpoint(&required_path(&cfg.paths.image_checkpoint, "image_checkpoint")?)?;
            let schedule = NoiseSchedule::linear(&ckpt_manifest.schedule)?;
            check_corpus_size(&clips, model.config.height, model.config.width)?;
            let style = StyleSpec::from_id(cfg.style.style_id);
            let frames = style_frames(&style_clips(&clips, cfg.style.style_id), cfg.style.style_id);
            if frames.is_empty() {
                return Err(Error::Validation(format!(
                    "corpus has no clips of style {}",
                    cfg.style.style_id
                )));
            }
            // classifier trained on the whole corpus
            let mut clf_examples = Vec::new();
            for lc in &clips {
                let mut words = lc.clip.style.descriptive_phrase();
                words.push(lc.clip.motion_id.keyword().to_string());
                for f in &lc.clip.frames {
                    clf_examples.push((f.image.clone(), words.clone()));
                }
            }
            let classifier = KeywordClassifier::train(
                &clf_examples,
                model.vocab(),
                40,
                0.8,
                cfg.style.seed,
            )?;
            let variants = [
                StyleVariant::None,
                StyleVariant::Lora,
                StyleVariant::Dora,
                StyleVariant::PropagationMasked,
            ];
            let ab_cfg = AblationConfig {
                steps: cfg.style.steps,
                lr: cfg.style.lr,
                rank: cfg.style.rank,
                seed: cfg.style.seed,
                samples: cfg.style.samples,
                background: cfg.style.background.clone(),
            };
            let rows = compare_adapter_variants(
                &model,
                &schedule,
                &frames,
                &frames[0],
                &style.descriptive_phrase(),
                &variants,
                &classifier,
                &ab_cfg,
            )?;
            let mut csv = String::from("variant,style_align,text_align,seed\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{:.6},{:.6},{}\n",
                    r.variant, r.style_align, r.text_align, r.seed
                ));
            }
            fs::write(run_dir.join("metrics.csv"), csv)?;

            // sample grid: one row per variant
            let mut grid_rows = Vec::new();
            for variant in &variants {
                let scene_path = run_dir.join(format!("scene_{}.png", variant.label()));
                let bank = match variant {
                    StyleVariant::None => AdapterBank::new(crate::style::STYLE_BANK),
                    _ => {
                        let style_cfg = StyleTrainConfig {
                            rank: ab_cfg.rank,
                            dropout_p: 0.0,
                            variant: if *variant == StyleVariant::Lora {
                                AdapterVariant::Lora
                            } else {
                                AdapterVariant::Dora
                            },
                            masked: *variant == StyleVariant::PropagationMasked,
                            steps: ab_cfg.steps,
                            lr: ab_cfg.lr,
                            seed: ab_cfg.seed,
                            sites: None,
                            dora_eps_guard: None,
                        };
                        let mut opt = AdamState::new();
                        train_style_adapter(
                            &model,
                            &schedule,
                            &frames,
                            &style.descriptive_phrase(),
                            &style_cfg,
                            &mut opt,
                        )?
                        .0
                    }
                };
                let mut kw = style.descriptive_phrase();
                kw.push(ab_cfg.background.clone());
                let scene = synthesize_scene(
                    &model,
                    &schedule,
                    &frames[0].image,
                    &frames[0].mask,
                    &kw,
                    &bank,
                    ab_cfg.seed,
                    None,
                )?;
                crate::corpus::frame_to_rgb8(&scene).save(&scene_path)?;
                grid_rows.push(vec![scene_path]);
            }
            if let Some(grid) = image_grid(&grid_rows)? {
                grid.save(run_dir.join("variant_grid.png"))?;
            }
            Ok(vec!["metrics.csv".into(), "variant_grid.png".into()])
        }

        Command::MotionStage1 => {
            let clips = load_corpus(&required_path(&cfg.paths.corpus, "corpus")?)?;
            let (model, _, _, ckpt_manifest) =
                load_checkpoint(&required_path(&cfg.paths.clip_checkpoint, "clip_checkpoint")?)?;
            let schedule = NoiseSchedule::linear(&ckpt_manifest.schedule)?;
            check_corpus_size(&clips, model.config.height, model.config.width)?;
            let train = style_clips(&clips, cfg.motion.style_id);
            let mcfg = motion_cfg(cfg);
            let mut opt = AdamState::new();
            let (bank, report) = train_stage1_identity(&model, &schedule, &train, &mcfg, &mut opt)?;
            save_bank(&run_dir.join("motion_bank"), &bank)?;
            fs::write(
                run_dir.join("train_log.json"),
                serde_json::to_string_pretty(&serde_json::json!({"losses": report.losses}))?,
            )?;
            Ok(vec![
                "motion_bank/adapters.json".into(),
                "motion_bank/tensors.bin".into(),
                "train_log.json".into(),
            ])
        }

        Command::MotionStage2 => {
            let clips = load_corpus(&required_path(&cfg.paths.corpus, "corpus")?)?;
            let (model, _, _, ckpt_manifest) =
                load_checkpoint(&required_path(&cfg.paths.clip_checkpoint, "clip_checkpoint")?)?;
            let schedule = NoiseSchedule::linear(&ckpt_manifest.schedule)?;
            check_corpus_size(&clips, model.config.height, model.config.width)?;
            let mut bank = load_bank(&required_path(&cfg.paths.motion_bank, "motion_bank")?)?;
            let train = style_clips(&clips, cfg.motion.style_id);
            let mcfg = motion_cfg(cfg);
            let mut opt = AdamState::new();
            let report =
                train_stage2_motion(&model, &schedule, &train, &mut bank, &mcfg, &mut opt)?;
            save_bank(&run_dir.join("motion_bank"), &bank)?;
            fs::write(
                run_dir.join("train_log.json"),
                serde_json::to_string_pretty(&serde_json::json!({"losses": report.losses}))?,
            )?;
            Ok(vec![
                "motion_bank/adapters.json".into(),
                "motion_bank/tensors.bin".into(),
                "train_log.json".into(),
            ])
        }

        Command::AblateMu => {
            let clips = load_corpus(&required_path(&cfg.paths.corpus, "corpus")?)?;
            let (model, _, _, ckpt_manifest) =
                load_checkpoint(&required_path(&cfg.paths.clip_checkpoint, "clip_checkpoint")?)?;
            let schedule = NoiseSchedule::linear(&ckpt_manifest.schedule)?;
            check_corpus_size(&clips, model.config.height, model.config.width)?;
            let style = StyleSpec::from_id(cfg.motion.style_id);
            let train = style_clips(&clips, cfg.motion.style_id);
            // held-out clip: same style and motion, unseen generator seed
            let holdout = generate_motion_clip(
                &style,
                MotionId::WalkCycle,
                model.config.frames,
                (model.config.height, model.config.width),
                cfg.corpus.seed.wrapping_add(10_007),
            )?;
            let seeds: Vec<u64> = (0..cfg.motion.ablation_seeds as u64)
                .map(|i| cfg.motion.seed.wrapping_add(i))
                .collect();
            let mcfg = motion_cfg(cfg);
            let rows = ablate_mu(
                &model,
                &schedule,
                &train,
                &holdout,
                &cfg.motion.mu_sweep,
                cfg.motion.sigma,
                &seeds,
                &mcfg,
            )?;
            let mut csv = String::from("sampler,mu,recon_mse,smoothness,consistency,seed\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{:.6},{:.6},{:.6},{}\n",
                    r.sampler,
                    r.mu.map_or(String::new(), |m| m.to_string()),
                    r.recon_mse,
                    r.smoothness,
                    r.consistency,
                    r.seed
                ));
            }
            fs::write(run_dir.join("ablation_mu.csv"), csv)?;
            Ok(vec!["ablation_mu.csv".into()])
        }

        Command::StoryPlan => {
            let board = plan_with_config(cfg)?;
            fs::write(
                run_dir.join("storyboard.json"),
                serde_json::to_string_pretty(&board)?,
            )?;
            Ok(vec!["storyboard.json".into()])
        }

        Command::StoryRender => {
            let board: Storyboard = if cfg.paths.storyboard.is_empty() {
                plan_with_config(cfg)?
            } else {
                serde_json::from_str(&fs::read_to_string(&cfg.paths.storyboard)?)?
            };
            let (image_model, _, _, img_manifest) =
                load_checkpoint(&required_path(&cfg.paths.image_checkpoint, "image_checkpoint")?)?;
            let image_schedule = NoiseSchedule::linear(&img_manifest.schedule)?;
            let (clip_model, _, _, clip_manifest) =
                load_checkpoint(&required_path(&cfg.paths.clip_checkpoint, "clip_checkpoint")?)?;
            let clip_schedule = NoiseSchedule::linear(&clip_manifest.schedule)?;
            let style_bank = load_bank(&required_path(&cfg.paths.style_bank, "style_bank")?)?;
            let motion_bank = load_bank(&required_path(&cfg.paths.motion_bank, "motion_bank")?)?;
            let style = StyleSpec::from_id(cfg.style.style_id);
            let assets = StoryAssets {
                image_model: &image_model,
                image_schedule: &image_schedule,
                clip_model: &clip_model,
                clip_schedule: &clip_schedule,
                style_bank: &style_bank,
                motion_bank: &motion_bank,
                style: &style,
            };
            let story_dir = run_dir.join("story");
            let manifest = render_story(&board, &assets, &story_dir, cfg.story.seed)?;
            let mut artifacts = vec!["story/story_manifest.json".to_string()];
            for s in &manifest.shots {
                artifacts.push(format!("story/{}/preview.gif", s.dir));
            }
            fs::write(
                run_dir.join("storyboard.json"),
                serde_json::to_string_pretty(&board)?,
            )?;
            artifacts.push("storyboard.json".into());
            Ok(artifacts)
        }

        Command::Report { runs } => {
            emit_report(runs, run_dir)?;
            Ok(vec!["report.html".into()])
        }
    }
}

fn motion_cfg(cfg: &Config) -> MotionTrainConfig {
    MotionTrainConfig {
        rank: cfg.motion.rank,
        dropout_p: cfg.motion.dropout_p,
        lr: cfg.motion.lr,
        seed: cfg.motion.seed,
        stage1_steps: cfg.motion.stage1_steps,
        stage2_steps: cfg.motion.stage2_steps,
        stage1_shuffle: true,
        stage2_shuffle: false,
        stage2_sampler: TimestepSampler::shifted(
            cfg.schedule.steps,
            cfg.motion.mu,
            cfg.motion.sigma,
        ),
        sites: None,
    }
}

fn plan_with_config(cfg: &Config) -> Result<Storyboard> {
    let client: Box<dyn PlannerClient> = match cfg.story.planner.as_str() {
        "stub" => Box::new(StubPlanner {
            seed: cfg.story.seed,
        }),
        "http" => Box::new(HttpPlanner::from_env()?),
        other => {
            return Err(Error::Config(format!(
                "story.planner: unknown planner {other:?}"
            )))
        }
    };
    plan_storyboard(&cfg.story.character, cfg.story.n_shots, client.as_ref())
}
