use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARTIFACT_ROOT_VAR: &str = "GRIDSTRIKE_ARTIFACTS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
    pub case: String,
    /// Files written by the run, relative to the run directory.
    pub artifacts: Vec<String>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub wall_ms: u64,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: String, seed: u64, case: &str) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_digest,
            seed,
            case: case.into(),
            artifacts: Vec::new(),
            status: "running".into(),
            failure: None,
            wall_ms: 0,
        }
    }

    pub fn add(&mut self, name: &str) {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.into());
            self.artifacts.sort();
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(self).expect("manifest serializes") + "\n",
        )
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `--out` if given, else `$GRIDSTRIKE_ARTIFACTS/<name>` (default root
/// `artifacts`).
pub fn run_dir(out: Option<&Path>, name: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(ARTIFACT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("artifacts"))
            .join(name),
    }
}
