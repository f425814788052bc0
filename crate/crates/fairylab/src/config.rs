//! Structured run configuration: one TOML file, dotted-path overrides, and
//! validation that reports every violation at once.
//!
//! Key schema (all keys optional, defaults shown in `Config::default`):
//!
//! ```text
//! [corpus]   n_styles, clips_per_style, frames, height, width, seed
//! [schedule] steps, beta_start, beta_end
//! [model.image] height, width, patch, embed, hidden, depth
//! [model.clip]  height, width, patch, embed, hidden, depth, frames
//! [pretrain] steps, lr, seed
//! [style]    style_id, rank, dropout_p, variant, masked, steps, lr, seed,
//!            samples, background
//! [motion]   style_id, rank, dropout_p, lr, seed, stage1_steps, stage2_steps,
//!            mu, sigma, mu_sweep, ablation_seeds
//! [story]    n_shots, planner, character, seed
//! [paths]    corpus, image_checkpoint, clip_checkpoint, style_bank,
//!            motion_bank, storyboard
//! ```

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CorpusSection {
    pub n_styles: u32,
    pub clips_per_style: u32,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            n_styles: 4,
            clips_per_style: 4,
            frames: 8,
            height: 32,
            width: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelSection {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub embed: usize,
    pub hidden: usize,
    pub depth: usize,
    pub frames: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            height: 64,
            width: 64,
            patch: 4,
            embed: 48,
            hidden: 96,
            depth: 2,
            frames: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelsSection {
    pub image: ModelSection,
    pub clip: ModelSection,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection {
            image: ModelSection::default(),
            clip: ModelSection {
                height: 32,
                width: 32,
                frames: 8,
                embed: 64,
                ..ModelSection::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PretrainSection {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            steps: 1200,
            lr: 2e-3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct StyleSection {
    pub style_id: u32,
    pub rank: usize,
    pub dropout_p: f64,
    /// "lora" or "dora".
    pub variant: String,
    pub masked: bool,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Ablation samples per variant.
    pub samples: usize,
    pub background: String,
}

impl Default for StyleSection {
    fn default() -> Self {
        StyleSection {
            style_id: 0,
            rank: 4,
            dropout_p: 0.0,
            variant: "dora".into(),
            masked: true,
            steps: 400,
            lr: 2e-3,
            seed: 2,
            samples: 8,
            background: "forest".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MotionSection {
    pub style_id: u32,
    pub rank: usize,
    pub dropout_p: f64,
    pub lr: f64,
    pub seed: u64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub mu: f64,
    pub sigma: f64,
    pub mu_sweep: Vec<f64>,
    pub ablation_seeds: usize,
}

impl Default for MotionSection {
    fn default() -> Self {
        MotionSection {
            style_id: 0,
            rank: 4,
            dropout_p: 0.1,
            lr: 2e-3,
            seed: 3,
            stage1_steps: 300,
            stage2_steps: 300,
            mu: 6.0,
            sigma: 1.0,
            mu_sweep: vec![2.0, 4.0, 6.0],
            ablation_seeds: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct StorySection {
    pub n_shots: usize,
    /// "stub" or "http".
    pub planner: String,
    pub character: String,
    pub seed: u64,
}

impl Default for StorySection {
    fn default() -> Self {
        StorySection {
            n_shots: 3,
            planner: "stub".into(),
            character: "a small cartoon character".into(),
            seed: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct PathsSection {
    pub corpus: String,
    pub image_checkpoint: String,
    pub clip_checkpoint: String,
    pub style_bank: String,
    pub motion_bank: String,
    pub storyboard: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct Config {
    pub corpus: CorpusSection,
    pub schedule: ScheduleSection,
    pub model: ModelsSection,
    pub pretrain: PretrainSection,
    pub style: StyleSection,
    pub motion: MotionSection,
    pub story: StorySection,
    pub paths: PathsSection,
}

/// The known key tree; every leaf is a (name, type tag) pair.
const SCHEMA: &[(&str, &[(&str, &str)])] = &[
    (
        "corpus",
        &[
            ("n_styles", "int"),
            ("clips_per_style", "int"),
            ("frames", "int"),
            ("height", "int"),
            ("width", "int"),
            ("seed", "int"),
        ],
    ),
    (
        "schedule",
        &[("steps", "int"), ("beta_start", "float"), ("beta_end", "float")],
    ),
    (
        "model.image",
        &[
            ("height", "int"),
            ("width", "int"),
            ("patch", "int"),
            ("embed", "int"),
            ("hidden", "int"),
            ("depth", "int"),
            ("frames", "int"),
        ],
    ),
    (
        "model.clip",
        &[
            ("height", "int"),
            ("width", "int"),
            ("patch", "int"),
            ("embed", "int"),
            ("hidden", "int"),
            ("depth", "int"),
            ("frames", "int"),
        ],
    ),
    ("pretrain", &[("steps", "int"), ("lr", "float"), ("seed", "int")]),
    (
        "style",
        &[
            ("style_id", "int"),
            ("rank", "int"),
            ("dropout_p", "float"),
            ("variant", "string"),
            ("masked", "bool"),
            ("steps", "int"),
            ("lr", "float"),
            ("seed", "int"),
            ("samples", "int"),
            ("background", "string"),
        ],
    ),
    (
        "motion",
        &[
            ("style_id", "int"),
            ("rank", "int"),
            ("dropout_p", "float"),
            ("lr", "float"),
            ("seed", "int"),
            ("stage1_steps", "int"),
            ("stage2_steps", "int"),
            ("mu", "float"),
            ("sigma", "float"),
            ("mu_sweep", "float_array"),
            ("ablation_seeds", "int"),
        ],
    ),
    (
        "story",
        &[
            ("n_shots", "int"),
            ("planner", "string"),
            ("character", "string"),
            ("seed", "int"),
        ],
    ),
    (
        "paths",
        &[
            ("corpus", "string"),
            ("image_checkpoint", "string"),
            ("clip_checkpoint", "string"),
            ("style_bank", "string"),
            ("motion_bank", "string"),
            ("storyboard", "string"),
        ],
    ),
];

fn type_matches(v: &toml::Value, tag: &str) -> bool {
    match tag {
        "int" => v.is_integer(),
        "float" => v.is_float() || v.is_integer(),
        "bool" => v.is_bool(),
        "string" => v.is_str(),
        "float_array" => v
            .as_array()
            .is_some_and(|a| a.iter().all(|x| x.is_float() || x.is_integer())),
        _ => false,
    }
}

fn section_schema(path: &str) -> Option<&'static [(&'static str, &'static str)]> {
    SCHEMA.iter().find(|(p, _)| *p == path).map(|(_, s)| *s)
}

fn walk(value: &toml::Value, path: &str, violations: &mut Vec<String>) {
    let table = match value.as_table() {
        Some(t) => t,
        None => {
            violations.push(format!("{path}: expected a table"));
            return;
        }
    };
    if let Some(schema) = section_schema(path) {
        for (key, v) in table {
            match schema.iter().find(|(k, _)| k == key) {
                None => violations.push(format!("unknown key: {path}.{key}")),
                Some((_, tag)) => {
                    if !type_matches(v, tag) {
                        violations.push(format!("{path}.{key}: expected {tag}, got {v}"));
                    }
                }
            }
        }
        return;
    }
    // interior node: recurse into known sections
    for (key, v) in table {
        let child = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        let known = SCHEMA.iter().any(|(p, _)| *p == child || p.starts_with(&format!("{child}.")));
        if !known {
            violations.push(format!("unknown key: {child}"));
        } else {
            walk(v, &child, violations);
        }
    }
}

fn range_violations(cfg: &Config) -> Vec<String> {
    let mut v = Vec::new();
    if cfg.corpus.n_styles < 1 {
        v.push("corpus.n_styles: must be >= 1".into());
    }
    if !(4..=16).contains(&cfg.corpus.frames) {
        v.push("corpus.frames: must be in [4, 16]".into());
    }
    if cfg.schedule.steps < 2 {
        v.push("schedule.steps: must be >= 2".into());
    }
    if !(cfg.schedule.beta_start > 0.0 && cfg.schedule.beta_end < 1.0) {
        v.push("schedule: betas must satisfy 0 < beta_start <= beta_end < 1".into());
    }
    if !(0.0..1.0).contains(&cfg.style.dropout_p) {
        v.push("style.dropout_p: must be in [0, 1)".into());
    }
    if !(0.0..1.0).contains(&cfg.motion.dropout_p) {
        v.push("motion.dropout_p: must be in [0, 1)".into());
    }
    if cfg.style.variant != "lora" && cfg.style.variant != "dora" {
        v.push(format!(
            "style.variant: must be \"lora\" or \"dora\", got {:?}",
            cfg.style.variant
        ));
    }
    if cfg.story.planner != "stub" && cfg.story.planner != "http" {
        v.push(format!(
            "story.planner: must be \"stub\" or \"http\", got {:?}",
            cfg.story.planner
        ));
    }
    if cfg.story.n_shots < 1 {
        v.push("story.n_shots: must be >= 1".into());
    }
    if !(cfg.motion.sigma > 0.0) {
        v.push("motion.sigma: must be > 0".into());
    }
    v
}

/// Parse a dotted-path override like `style.rank=8`. Values parse as TOML
/// literals, falling back to a bare string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key.path=value")))?;
    let keys: Vec<String> = path.split('.').map(str::to_string).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {spec:?} has an empty path segment")));
    }
    // parse the literal through a one-key document; bare words fall back to
    // strings so `--set story.planner=stub` works unquoted
    let value = format!("v = {raw}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((keys, value))
}

fn apply_override(root: &mut toml::Value, keys: &[String], value: toml::Value) {
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let table = node.as_table_mut().expect("tables ensured below");
        node = table
            .entry(k.clone())
            .or_insert_with(|| toml::Value::Table(Default::default()));
        if !node.is_table() {
            *node = toml::Value::Table(Default::default());
        }
    }
    node.as_table_mut()
        .expect("table")
        .insert(keys.last().expect("non-empty").clone(), value);
}

/// Load the config: TOML text (empty = all defaults) plus dotted overrides.
/// Every violation is reported, not just the first.
pub fn load_config(toml_text: &str, overrides: &[String]) -> Result<Config> {
    let mut value: toml::Value = toml_text
        .parse()
        .map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
    let mut violations = Vec::new();
    let mut parsed_overrides = Vec::new();
    for o in overrides {
        match parse_override(o) {
            Ok(kv) => parsed_overrides.push(kv),
            Err(e) => violations.push(e.to_string()),
        }
    }
    for (keys, v) in parsed_overrides {
        apply_override(&mut value, &keys, v);
    }
    walk(&value, "", &mut violations);
    if violations.is_empty() {
        let cfg: Config = value
            .try_into()
            .map_err(|e| Error::Config(format!("config does not deserialize: {e}")))?;
        violations.extend(range_violations(&cfg));
        if violations.is_empty() {
            return Ok(cfg);
        }
    }
    Err(Error::Config(violations.join("\n")))
}

pub fn load_config_file(path: &Path, overrides: &[String]) -> Result<Config> {
    let text = if path.exists() {
        std::fs::read_to_string(path)?
    } else {
        String::new()
    };
    load_config(&text, overrides)
}
