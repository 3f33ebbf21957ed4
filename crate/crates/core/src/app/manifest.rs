use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// What a command did: the resolved config, every file it wrote with a
/// checksum, wall-clock timings and headline metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub artifacts: Vec<Artifact>,
    pub timings_s: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            artifacts: Vec::new(),
            timings_s: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    /// Records an already written file.
    pub fn add_artifact(&mut self, path: &Path) -> Result<()> {
        let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
        self.artifacts.push(Artifact {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
            bytes: meta.len(),
        });
        Ok(())
    }

    pub fn artifact(&self, file_name: &str) -> Option<&Artifact> {
        self.artifacts
            .iter()
            .find(|a| a.path.file_name().is_some_and(|f| f == file_name))
    }

    pub fn metric(&mut self, key: impl Into<String>, value: impl Serialize) {
        self.metrics
            .insert(key.into(), serde_json::to_value(value).expect("metric serializes"));
    }

    pub fn timing(&mut self, key: impl Into<String>, secs: f64) {
        self.timings_s.insert(key.into(), secs);
    }

    /// Writes `<command>_manifest.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}_manifest.json", self.command));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
