//! Run directories and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::studies::Outcome;

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED: &str = "resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub study: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub workers: usize,
    pub wall_time_s: f64,
    pub pass: bool,
    pub summary: serde_json::Value,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub fissure: String,
    pub manifest_format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self { fissure: env!("CARGO_PKG_VERSION").into(), manifest_format: 1 }
    }
}

pub fn config_hash(resolved: &str) -> String {
    format!("{:x}", Sha256::digest(resolved.as_bytes()))
}

/// `<root>/<study>_<first 8 hex digits of the config hash>`.
pub fn run_dir(root: &Path, study: &str, hash: &str) -> PathBuf {
    root.join(format!("{study}_{}", &hash[..8]))
}

pub fn write_run(dir: &Path, resolved: &str, mut manifest: Manifest, outcome: &Outcome) -> std::io::Result<Manifest> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED), resolved)?;
    manifest.artifacts = outcome.artifacts.iter().map(|a| ArtifactEntry { name: a.name.clone(), bytes: a.bytes.len() }).collect();
    for a in &outcome.artifacts {
        fs::write(dir.join(&a.name), &a.bytes)?;
    }
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_hex() {
        let h = config_hash("seed = 1\n");
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash("seed = 1\n"));
        assert_ne!(h, config_hash("seed = 2\n"));
        assert_eq!(run_dir(Path::new("out"), "dyncheck", &h), Path::new("out").join(format!("dyncheck_{}", &h[..8])));
    }
}
