//! The run manifest: a config snapshot plus one entry per completed step,
//! listing every artifact the step wrote and its wall-clock time. Reports
//! are byte-deterministic; the manifest's timings are not, by nature.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub step: String,
    pub artifacts: Vec<String>,
    pub wall_clock_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> RunManifest {
        let config_hash = hash_config(&config);
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            config_hash,
            entries: Vec::new(),
        }
    }

    pub fn load(out_dir: &Path) -> Result<RunManifest, CliError> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            CliError::MissingPrerequisite(format!(
                "no manifest at {}; run `fidelity prep` first",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("corrupt manifest {}: {e}", path.display())))
    }

    pub fn save(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self).unwrap())
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    /// Swap in an updated config snapshot (flag overrides), re-hashing it.
    pub fn set_config(&mut self, config: RunConfig) {
        self.config_hash = hash_config(&config);
        self.config = config;
    }

    /// Replace any previous entry for `step` so reruns stay idempotent.
    pub fn record(&mut self, step: &str, artifacts: Vec<String>, wall_clock_ms: u128) {
        self.entries.retain(|e| e.step != step);
        self.entries.push(ManifestEntry {
            step: step.to_string(),
            artifacts,
            wall_clock_ms,
        });
    }

    pub fn require_artifact(&self, out_dir: &Path, name: &str, produced_by: &str) -> Result<PathBuf, CliError> {
        let path = out_dir.join(name);
        if !path.exists() {
            return Err(CliError::MissingPrerequisite(format!(
                "missing {}; run `fidelity {produced_by}` first",
                path.display()
            )));
        }
        Ok(path)
    }
}

fn hash_config(config: &RunConfig) -> String {
    let mut hasher = DefaultHasher::new();
    config.to_json().hash(&mut hasher);
    format!("{:016x}", hasher.finish())
}
