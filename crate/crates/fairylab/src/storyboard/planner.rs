//! Planner clients: a deterministic offline stub and a generic
//! chat-completions HTTP client configured by `PLANNER_URL` / `PLANNER_KEY`.

use crate::diffusion::vocab::BACKGROUND_WORDS;
use crate::error::{Error, Result};
use crate::util::stream_rng;
use rand::Rng;

/// Produces structured storyboard text for a prompt.
pub trait PlannerClient {
    fn generate(&self, prompt: &str) -> Result<String>;
}

/// The request prompt shared by every client. The expected reply is a single
/// JSON document matching the storyboard schema.
pub fn request_prompt(character_description: &str, n_shots: usize) -> String {
    format!(
        "Plan a short cartoon story for this character: {character_description}.\n\
         Reply with ONE JSON object only, no prose, with this shape:\n\
         {{\n\
           \"global\": {{\"character\": str, \"background_context\": str, \"main_event\": str}},\n\
           \"shots\": [\n\
             {{\"background\": one of {backgrounds:?},\n\
               \"action\": short action phrase,\n\
               \"shot_type\": \"wide\"|\"medium\"|\"close_up\",\n\
               \"perspective\": \"front\"|\"three_quarter\"|\"side\",\n\
               \"focal_region\": \"full_body\"|\"upper_body\"|\"head\"}}\n\
           ] (exactly {n_shots} entries)\n\
         }}",
        backgrounds = BACKGROUND_WORDS,
    )
}

/// Pure function of (seed, character description): assembles a storyboard
/// from fixed template pools. Byte-identical output across runs.
pub struct StubPlanner {
    pub seed: u64,
}

const STUB_ACTIONS: [&str; 6] = [
    "waves hello",
    "walks across",
    "spins around",
    "bobs gently",
    "marches forward",
    "twirls in place",
];
const STUB_EVENTS: [&str; 4] = [
    "searches for a lost star",
    "greets every creature it meets",
    "practices a festival dance",
    "maps the edge of the meadow",
];
const STUB_SHOT_TYPES: [&str; 3] = ["wide", "medium", "close_up"];
const STUB_PERSPECTIVES: [&str; 3] = ["front", "three_quarter", "side"];
const STUB_FOCALS: [&str; 3] = ["full_body", "upper_body", "head"];

impl PlannerClient for StubPlanner {
    fn generate(&self, prompt: &str) -> Result<String> {
        // the prompt embeds the character description and shot count; key the
        // stream on the full prompt so distinct requests get distinct plans
        let mut rng = stream_rng(self.seed, &format!("stub-planner/{prompt}"));
        let n_shots = prompt
            .split("exactly ")
            .nth(1)
            .and_then(|s| s.split(' ').next())
            .and_then(|s| s.parse::<usize>().ok())
            .unwrap_or(3);
        let character = prompt
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("Plan a short cartoon story for this character: "))
            .unwrap_or("a small cartoon character")
            .trim_end_matches('.');

        let event = STUB_EVENTS[rng.gen_range(0..STUB_EVENTS.len())];
        let context = BACKGROUND_WORDS[rng.gen_range(0..BACKGROUND_WORDS.len())];
        let mut shots = Vec::with_capacity(n_shots);
        for i in 0..n_shots {
            let background = BACKGROUND_WORDS[rng.gen_range(0..BACKGROUND_WORDS.len())];
            let action = STUB_ACTIONS[rng.gen_range(0..STUB_ACTIONS.len())];
            // open wide, then alternate framings deterministically
            let shot_type = if i == 0 {
                "wide"
            } else {
                STUB_SHOT_TYPES[rng.gen_range(0..STUB_SHOT_TYPES.len())]
            };
            let perspective = STUB_PERSPECTIVES[rng.gen_range(0..STUB_PERSPECTIVES.len())];
            let focal = STUB_FOCALS[rng.gen_range(0..STUB_FOCALS.len())];
            shots.push(serde_json::json!({
                "background": background,
                "action": action,
                "shot_type": shot_type,
                "perspective": perspective,
                "focal_region": focal,
            }));
        }
        let doc = serde_json::json!({
            "global": {
                "character": character,
                "background_context": format!("a {context} under soft light"),
                "main_event": event,
            },
            "shots": shots,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Generic chat-completions client. `PLANNER_URL` is the full endpoint URL;
/// `PLANNER_KEY` (optional) is sent as a bearer token. The response must
/// carry the storyboard JSON in `choices[0].message.content`.
pub struct HttpPlanner {
    pub url: String,
    pub key: Option<String>,
    pub model: Option<String>,
}

impl HttpPlanner {
    pub fn from_env() -> Result<HttpPlanner> {
        let url = std::env::var("PLANNER_URL")
            .map_err(|_| Error::Planner("PLANNER_URL is not set".into()))?;
        Ok(HttpPlanner {
            url,
            key: std::env::var("PLANNER_KEY").ok(),
            model: std::env::var("PLANNER_MODEL").ok(),
        })
    }

    /// Extract the storyboard text from a chat-completions response body.
    pub fn extract_content(body: &serde_json::Value) -> Result<String> {
        body.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Planner("response has no choices[0].message.content".into()))
    }
}

impl PlannerClient for HttpPlanner {
    fn generate(&self, prompt: &str) -> Result<String> {
        let client = reqwest::blocking::Client::new();
        let mut body = serde_json::json!({
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(model) = &self.model {
            body["model"] = serde_json::json!(model);
        }
        let mut req = client.post(&self.url).json(&body);
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| Error::Planner(format!("planner request failed: {e}")))?;
        if !resp.status().is_success() {
            return Err(Error::Planner(format!(
                "planner endpoint returned {}",
                resp.status()
            )));
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| Error::Planner(format!("planner response is not JSON: {e}")))?;
        Self::extract_content(&value)
    }
}
