//! Checkpoint directory: base weights, optimizer moments, adapter banks by
//! name, and a training manifest (config, seeds, RNG position, loss curve).
//!
//! Layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/tensors.bin        # model parameters
//! <dir>/optimizer.bin      # adam moments, keys m/<name> and v/<name>
//! <dir>/banks/<name>/      # adapter bank archives
//! ```

use super::model::{Denoiser, DenoiserConfig};
use super::schedule::ScheduleConfig;
use super::train::AdamState;
use crate::adapters::{load_bank, save_bank, AdapterBank};
use crate::archive::{read_archive, write_archive};
use crate::error::{Error, Result};
use ndarray::Array2;
use std::fs;
use std::path::Path;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainManifest {
    pub version: u32,
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    /// ChaCha word position for exact stream resume, split for JSON safety.
    pub rng_word_pos_hi: u64,
    pub rng_word_pos_lo: u64,
    pub step: usize,
    pub loss_history: Vec<f64>,
    pub trainable: Vec<String>,
    pub bank_names: Vec<String>,
}

impl TrainManifest {
    pub fn rng_word_pos(&self) -> u128 {
        ((self.rng_word_pos_hi as u128) << 64) | self.rng_word_pos_lo as u128
    }

    pub fn set_rng_word_pos(&mut self, pos: u128) {
        self.rng_word_pos_hi = (pos >> 64) as u64;
        self.rng_word_pos_lo = pos as u64;
    }
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Denoiser<f32>,
    banks: &[&AdapterBank<f32>],
    opt: &AdamState<f32>,
    manifest: &TrainManifest,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tensors: Vec<(String, Array2<f32>)> = model
        .params()
        .iter()
        .map(|(name, t)| (name.to_string(), t.borrow().clone()))
        .collect();
    write_archive(&dir.join("tensors.bin"), &tensors)?;

    let mut moments: Vec<(String, Array2<f32>)> = Vec::new();
    for (name, m, v) in opt.moments() {
        moments.push((format!("m/{name}"), m.clone()));
        moments.push((format!("v/{name}"), v.clone()));
    }
    write_archive(&dir.join("optimizer.bin"), &moments)?;

    for bank in banks {
        save_bank(&dir.join("banks").join(&bank.name), bank)?;
    }
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)?,
    )?;
    Ok(())
}

pub fn load_checkpoint(
    dir: &Path,
) -> Result<(Denoiser<f32>, Vec<AdapterBank<f32>>, AdamState<f32>, TrainManifest)> {
    let manifest: TrainManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Archive(format!(
            "checkpoint version {} unsupported",
            manifest.version
        )));
    }
    let mut model: Denoiser<f32> = Denoiser::new(manifest.model.clone(), manifest.seed)?;
    model.load_params(read_archive(&dir.join("tensors.bin"))?)?;

    let mut opt = AdamState::new();
    opt.step = manifest.step;
    let moments = read_archive(&dir.join("optimizer.bin"))?;
    let mut m_entries: Vec<(String, Array2<f32>)> = Vec::new();
    let mut v_entries: Vec<(String, Array2<f32>)> = Vec::new();
    for (key, arr) in moments {
        if let Some(name) = key.strip_prefix("m/") {
            m_entries.push((name.to_string(), arr));
        } else if let Some(name) = key.strip_prefix("v/") {
            v_entries.push((name.to_string(), arr));
        } else {
            return Err(Error::Archive(format!("unknown optimizer key {key}")));
        }
    }
    for (name, m) in m_entries {
        let v = v_entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Archive(format!("second moment missing for {name}")))?;
        opt.insert_moments(&name, m, v);
    }

    let mut banks = Vec::new();
    for name in &manifest.bank_names {
        banks.push(load_bank(&dir.join("banks").join(name))?);
    }
    Ok((model, banks, opt, manifest))
}

pub fn new_manifest(
    model: &DenoiserConfig,
    schedule: &ScheduleConfig,
    seed: u64,
) -> TrainManifest {
    TrainManifest {
        version: FORMAT_VERSION,
        model: model.clone(),
        schedule: schedule.clone(),
        seed,
        rng_word_pos_hi: 0,
        rng_word_pos_lo: 0,
        step: 0,
        loss_history: Vec::new(),
        trainable: Vec::new(),
        bank_names: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{DropoutDraw, ForwardPhaseCtx, Phase};
    use crate::diffusion::media::Media;
    use ndarray::Array3;
    use tempfile::TempDir;

    #[test]
    fn reload_reproduces_forward_bit_exactly() {
        let tmp = TempDir::new().unwrap();
        let cfg = DenoiserConfig::image(32, 32);
        let model: Denoiser<f32> = Denoiser::new(cfg.clone(), 11).unwrap();
        let manifest = new_manifest(&cfg, &ScheduleConfig::default(), 11);
        save_checkpoint(tmp.path(), &model, &[], &AdamState::new(), &manifest).unwrap();

        let (loaded, banks, _, _) = load_checkpoint(tmp.path()).unwrap();
        assert!(banks.is_empty());

        let z = Media::Image(Array3::from_shape_fn((32, 32, 3), |(y, x, c)| {
            ((y * 31 + x * 7 + c) % 13) as f32 / 13.0 - 0.5
        }));
        let dropout = DropoutDraw::none();
        let ctx = ForwardPhaseCtx {
            phase: Phase::Infer,
            token_mask: None,
            dropout: &dropout,
            dora_eps_guard: None,
        };
        let a = model.predict_eps(&z, None, &[3], 17, &[], &ctx).unwrap();
        let b = loaded.predict_eps(&z, None, &[3], 17, &[], &ctx).unwrap();
        for (x, y) in a.frame(0).iter().zip(b.frame(0).iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
