//! Storyboard planning: a global narrative plus ordered shot records, a
//! pluggable text-generation client with a deterministic offline stub, crop
//! geometry, and end-to-end story rendering.

mod geometry;
mod planner;
mod render;

pub use geometry::{compute_crop, focal_sub_box, CropBox};
pub use planner::{HttpPlanner, PlannerClient, StubPlanner};
pub use render::{render_story, StoryAssets, StoryManifest};

use crate::corpus::MotionId;
use crate::diffusion::vocab::BACKGROUND_WORDS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotType {
    Wide,
    Medium,
    CloseUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    Front,
    ThreeQuarter,
    Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalRegion {
    FullBody,
    UpperBody,
    Head,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GlobalNarrative {
    pub character: String,
    pub background_context: String,
    pub main_event: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Shot {
    pub background: String,
    pub action: String,
    /// Resolved during planning via the action keyword table.
    pub motion_id: MotionId,
    pub shot_type: ShotType,
    pub perspective: Perspective,
    pub focal_region: FocalRegion,
    /// Normalized (x, y, w, h); filled by the renderer from the character's
    /// bounding box in the synthesized scene.
    pub crop_box: Option<CropBox>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Storyboard {
    pub global: GlobalNarrative,
    pub shots: Vec<Shot>,
}

impl Storyboard {
    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() {
            return Err(Error::Planner("storyboard has no shots".into()));
        }
        for (i, s) in self.shots.iter().enumerate() {
            if let Some(cb) = &s.crop_box {
                cb.validate().map_err(|e| {
                    Error::Planner(format!("shot {i} crop box invalid: {e}"))
                })?;
            }
        }
        Ok(())
    }
}

/// Exact or synonym-table match into the motion library; unknown keywords
/// fall back to idle-bob with a warning. Total by construction.
pub fn map_action_keyword(keyword: &str) -> MotionId {
    let k = keyword.trim().to_lowercase();
    for (motion, synonyms) in ACTION_SYNONYMS {
        if synonyms.iter().any(|s| *s == k) {
            return *motion;
        }
    }
    log::warn!("unknown action keyword {keyword:?}; defaulting to idle-bob");
    MotionId::IdleBob
}

pub const ACTION_SYNONYMS: &[(MotionId, &[&str])] = &[
    (
        MotionId::Wave,
        &["wave", "waves", "waves hello", "waving", "greets", "hello", "salutes"],
    ),
    (
        MotionId::WalkCycle,
        &[
            "walk",
            "walks",
            "walking",
            "walk-cycle",
            "walks across",
            "marches",
            "marches forward",
            "strolls",
        ],
    ),
    (
        MotionId::Spin,
        &["spin", "spins", "spin around", "spins around", "twirls", "twirls in place", "turns around"],
    ),
    (
        MotionId::IdleBob,
        &["idle", "idle-bob", "bob", "bobs", "bobs gently", "stands", "waits", "breathes"],
    ),
];

/// Nearest closed-vocabulary background keyword for free planner text;
/// unknown text falls back to "meadow" with a warning.
pub fn map_background_keyword(text: &str) -> String {
    let t = text.trim().to_lowercase();
    for w in BACKGROUND_WORDS {
        if t == w || t.contains(w) {
            return (*w).to_string();
        }
    }
    log::warn!("background {text:?} not in the closed vocabulary; using meadow");
    "meadow".to_string()
}

/// Parse, validate, and repair a planner response into a storyboard.
///
/// Repairable: malformed enum fields (default medium / front / full_body,
/// logged), free-text backgrounds (mapped into the vocabulary), more shots
/// than requested (truncated). Beyond repair: non-object documents, missing
/// or empty shot arrays, fewer shots than requested.
pub fn parse_storyboard(raw: &str, character: &str, n_shots: usize) -> Result<Storyboard> {
    let doc: serde_json::Value = serde_json::from_str(raw)
        .map_err(|e| Error::Planner(format!("planner output is not JSON: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Planner("planner output is not a JSON object".into()))?;

    let global_value = obj.get("global").cloned().unwrap_or_default();
    let text_field = |v: &serde_json::Value, key: &str, default: &str| -> String {
        v.get(key)
            .and_then(|x| x.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| default.to_string())
    };
    let global = GlobalNarrative {
        character: text_field(&global_value, "character", character),
        background_context: text_field(&global_value, "background_context", "a quiet meadow"),
        main_event: text_field(&global_value, "main_event", "a short adventure"),
    };

    let shots_raw = obj
        .get("shots")
        .and_then(|s| s.as_array())
        .ok_or_else(|| Error::Planner("planner output has no shots array".into()))?;
    if shots_raw.is_empty() {
        return Err(Error::Planner("planner returned an empty shot list".into()));
    }
    if shots_raw.len() < n_shots {
        return Err(Error::Planner(format!(
            "planner returned {} shots, {} requested",
            shots_raw.len(),
            n_shots
        )));
    }
    if shots_raw.len() > n_shots {
        log::warn!(
            "planner returned {} shots; truncating to {}",
            shots_raw.len(),
            n_shots
        );
    }

    fn repair_enum<E: serde::de::DeserializeOwned>(
        shot: &serde_json::Value,
        key: &str,
        default: E,
        shot_index: usize,
    ) -> E {
        match shot.get(key) {
            Some(v) => match serde_json::from_value::<E>(v.clone()) {
                Ok(e) => e,
                Err(_) => {
                    log::warn!("shot {shot_index}: malformed {key} {v}; using default");
                    default
                }
            },
            None => {
                log::warn!("shot {shot_index}: missing {key}; using default");
                default
            }
        }
    }

    let mut shots = Vec::with_capacity(n_shots);
    for (i, sv) in shots_raw.iter().take(n_shots).enumerate() {
        if !sv.is_object() {
            return Err(Error::Planner(format!("shot {i} is not an object")));
        }
        let action = text_field(sv, "action", "");
        let background = map_background_keyword(&text_field(sv, "background", "meadow"));
        let motion_id = map_action_keyword(&action);
        shots.push(Shot {
            background,
            action,
            motion_id,
            shot_type: repair_enum(sv, "shot_type", ShotType::Medium, i),
            perspective: repair_enum(sv, "perspective", Perspective::Front, i),
            focal_region: repair_enum(sv, "focal_region", FocalRegion::FullBody, i),
            crop_box: None,
        });
    }
    let board = Storyboard { global, shots };
    board.validate()?;
    Ok(board)
}

/// Plan a storyboard through a client, retrying transient failures.
pub fn plan_storyboard(
    character_description: &str,
    n_shots: usize,
    client: &dyn PlannerClient,
) -> Result<Storyboard> {
    if n_shots < 1 {
        return Err(Error::Validation("a storyboard needs at least one shot".into()));
    }
    let prompt = planner::request_prompt(character_description, n_shots);
    let mut last_err = None;
    for attempt in 0..3 {
        match client.generate(&prompt) {
            Ok(raw) => return parse_storyboard(&raw, character_description, n_shots),
            Err(e) => {
                log::warn!("planner attempt {attempt} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Planner("planner failed".into())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_synonyms_cover_the_motion_library() {
        // exhaustive table scan: every entry maps to a defined motion
        for (motion, synonyms) in ACTION_SYNONYMS {
            for s in *synonyms {
                assert_eq!(map_action_keyword(s), *motion);
            }
        }
        assert_eq!(map_action_keyword("waves hello"), MotionId::Wave);
        assert_eq!(map_action_keyword(""), MotionId::IdleBob);
        assert_eq!(map_action_keyword("backflips"), MotionId::IdleBob);
    }

    #[test]
    fn malformed_enum_repaired_to_defaults() {
        let raw = r#"{
            "global": {"character": "a teal robot", "background_context": "x", "main_event": "y"},
            "shots": [
                {"background": "forest", "action": "waves hello",
                 "shot_type": "extreme_zoom", "perspective": 42}
            ]
        }"#;
        let board = parse_storyboard(raw, "a teal robot", 1).unwrap();
        assert_eq!(board.shots[0].shot_type, ShotType::Medium);
        assert_eq!(board.shots[0].perspective, Perspective::Front);
        assert_eq!(board.shots[0].focal_region, FocalRegion::FullBody);
        assert_eq!(board.shots[0].motion_id, MotionId::Wave);
    }

    #[test]
    fn unrepairable_documents_rejected() {
        assert!(parse_storyboard("not json", "c", 1).is_err());
        assert!(parse_storyboard("[1,2]", "c", 1).is_err());
        assert!(parse_storyboard(r#"{"shots": []}"#, "c", 1).is_err());
        assert!(parse_storyboard(r#"{"shots": [{}]}"#, "c", 2).is_err());
    }

    #[test]
    fn free_text_backgrounds_map_into_vocabulary() {
        assert_eq!(map_background_keyword("a deep dark forest"), "forest");
        assert_eq!(map_background_keyword("NIGHT"), "night");
        assert_eq!(map_background_keyword("the moon"), "meadow");
    }
}
