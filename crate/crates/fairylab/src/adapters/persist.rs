//! Adapter bank archives: a tensor archive plus `adapters.json`.
//!
//! Shared up factors are stored once under their `shared_A_key` and re-linked
//! on load, so loaded identity and motion adapters alias one tensor object.

use super::{AdapterBank, AdapterRole, AdapterVariant, BankEntry, LowRankAdapter};
use crate::archive::{read_archive, write_archive};
use crate::error::{Error, Result};
use crate::params::{shared, SharedTensor};
use ndarray::Array2;
use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::rc::Rc;

const TENSORS_FILE: &str = "tensors.bin";
const MANIFEST_FILE: &str = "adapters.json";
const FORMAT_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct EntryManifest {
    site_id: String,
    role: AdapterRole,
    rank: usize,
    dropout_p: f64,
    variant: AdapterVariant,
    enabled: bool,
    masked: bool,
    shared_a_key: Option<String>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct BankManifest {
    version: u32,
    name: String,
    entries: Vec<EntryManifest>,
}

fn tensor_key(i: usize, suffix: &str) -> String {
    format!("entry{i:03}.{suffix}")
}

pub fn save_bank(dir: &Path, bank: &AdapterBank<f32>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors: Vec<(String, Array2<f32>)> = Vec::new();
    let mut entries = Vec::new();
    let mut stored_shared: HashMap<usize, String> = HashMap::new();

    for (i, e) in bank.entries().iter().enumerate() {
        let a_ptr = Rc::as_ptr(&e.adapter.a) as usize;
        match (&e.shared_a_key, stored_shared.get(&a_ptr)) {
            (Some(key), Some(existing)) => {
                if key != existing {
                    return Err(Error::Archive(format!(
                        "entry {i} shared_a_key {key} disagrees with {existing}"
                    )));
                }
            }
            (Some(key), None) => {
                tensors.push((format!("shared.{key}"), e.adapter.a.borrow().clone()));
                stored_shared.insert(a_ptr, key.clone());
            }
            (None, _) => {
                tensors.push((tensor_key(i, "a"), e.adapter.a.borrow().clone()));
            }
        }
        tensors.push((tensor_key(i, "b"), e.adapter.b.borrow().clone()));
        if let Some(g) = &e.adapter.dora_magnitude {
            tensors.push((tensor_key(i, "g"), g.borrow().clone()));
        }
        entries.push(EntryManifest {
            site_id: e.adapter.site_id.clone(),
            role: e.role,
            rank: e.adapter.rank,
            dropout_p: e.adapter.dropout_p,
            variant: e.adapter.variant,
            enabled: e.enabled,
            masked: e.masked,
            shared_a_key: e.shared_a_key.clone(),
        });
    }

    write_archive(&dir.join(TENSORS_FILE), &tensors)?;
    let manifest = BankManifest {
        version: FORMAT_VERSION,
        name: bank.name.clone(),
        entries,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_bank(dir: &Path) -> Result<AdapterBank<f32>> {
    let manifest: BankManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Archive(format!(
            "adapter bank version {} unsupported (want {FORMAT_VERSION})",
            manifest.version
        )));
    }
    let tensors: HashMap<String, Array2<f32>> =
        read_archive(&dir.join(TENSORS_FILE))?.into_iter().collect();
    let mut shared_cache: HashMap<String, SharedTensor<f32>> = HashMap::new();

    let fetch = |tensors: &HashMap<String, Array2<f32>>, key: &str| -> Result<Array2<f32>> {
        tensors
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Archive(format!("dangling tensor reference {key}")))
    };

    let mut bank = AdapterBank::new(&manifest.name);
    for (i, em) in manifest.entries.iter().enumerate() {
        let a: SharedTensor<f32> = match &em.shared_a_key {
            Some(key) => match shared_cache.get(key) {
                Some(t) => Rc::clone(t),
                None => {
                    let t = shared(fetch(&tensors, &format!("shared.{key}"))?);
                    shared_cache.insert(key.clone(), Rc::clone(&t));
                    t
                }
            },
            None => shared(fetch(&tensors, &tensor_key(i, "a"))?),
        };
        let b = shared(fetch(&tensors, &tensor_key(i, "b"))?);
        let dora_magnitude = match em.variant {
            AdapterVariant::Dora => Some(shared(fetch(&tensors, &tensor_key(i, "g"))?)),
            AdapterVariant::Lora => None,
        };
        let adapter = LowRankAdapter {
            site_id: em.site_id.clone(),
            rank: em.rank,
            dropout_p: em.dropout_p,
            variant: em.variant,
            a,
            b,
            dora_magnitude,
        };
        bank.insert(BankEntry {
            role: em.role,
            enabled: em.enabled,
            masked: em.masked,
            adapter,
            shared_a_key: em.shared_a_key.clone(),
        })?;
    }
    Ok(bank)
}
