//! Run directories and manifests. Every subcommand writes its artifacts
//! under one run-id directory and records them, relative to that directory,
//! in `run_manifest.json`. Two runs with the same resolved config and seed
//! produce manifests identical except for wall time.

use crate::config::Config;
use crate::error::Result;
use crate::util::checksum_bytes;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Resolved configuration at execution time.
    pub config: Config,
    /// `git describe` of the working tree, or "unknown".
    pub git_describe: String,
    pub wall_time_ms: u64,
    /// Artifact paths relative to the run directory.
    pub artifacts: Vec<String>,
}

/// Artifact root: `RUN_DIR` env var or `./runs`.
pub fn run_root() -> PathBuf {
    std::env::var("RUN_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from("runs"))
}

/// Deterministic run id: the subcommand plus a digest of the resolved
/// config, so identical configurations map to the same directory.
pub fn derive_run_id(subcommand: &str, config: &Config) -> String {
    let blob = serde_json::to_vec(config).expect("config serializes");
    let digest = checksum_bytes(&blob);
    format!("{}-{}", subcommand.replace(' ', "-"), &digest[..12])
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

pub fn write_manifest(run_dir: &Path, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(run_dir)?;
    fs::write(
        run_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(manifest)?,
    )?;
    Ok(())
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(
        run_dir.join("run_manifest.json"),
    )?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_id_is_deterministic_in_config() {
        let cfg = Config::default();
        assert_eq!(derive_run_id("style train", &cfg), derive_run_id("style train", &cfg));
        let mut cfg2 = cfg.clone();
        cfg2.style.rank = 16;
        assert_ne!(derive_run_id("style train", &cfg), derive_run_id("style train", &cfg2));
    }

    #[test]
    fn manifest_roundtrip() {
        let tmp = tempfile::TempDir::new().unwrap();
        let manifest = RunManifest {
            subcommand: "corpus gen".into(),
            config: Config::default(),
            git_describe: "unknown".into(),
            wall_time_ms: 5,
            artifacts: vec!["corpus/index.json".into()],
        };
        write_manifest(tmp.path(), &manifest).unwrap();
        let back = read_manifest(tmp.path()).unwrap();
        assert_eq!(back.subcommand, "corpus gen");
        assert_eq!(back.artifacts, manifest.artifacts);
    }
}
