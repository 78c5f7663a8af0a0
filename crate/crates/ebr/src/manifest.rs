//! Run manifests: a snapshot of everything that determined an output
//! artifact, written alongside it.
//!
//! Manifests contain no timestamps. The default run id is a hash of the
//! manifest itself, so identical inputs and configuration produce
//! byte-identical outputs end to end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot hash {path}: {source}")]
    Hash {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write manifest {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Provenance for one artifact-producing command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub run_id: String,
    /// Backend id, prompt variant, policy snapshot and similar knobs.
    pub config: BTreeMap<String, serde_json::Value>,
    /// sha256 of every input file, keyed by file name.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: Vec<String>) -> Self {
        RunManifest {
            tool: "ebr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            run_id: String::new(),
            config: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn set_config(&mut self, key: &str, value: impl Serialize) {
        self.config.insert(
            key.to_string(),
            serde_json::to_value(value).expect("config value serializes"),
        );
    }

    /// Records the sha256 of an input file under its file name.
    pub fn add_input_file(&mut self, path: &Path) -> Result<(), ManifestError> {
        let bytes = fs::read(path).map_err(|source| ManifestError::Hash {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.inputs.insert(name, hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    /// Records the sha256 of in-memory content (templates, rendered
    /// configuration) under a name.
    pub fn add_input_text(&mut self, name: &str, content: &str) {
        self.inputs
            .insert(name.to_string(), hex::encode(Sha256::digest(content.as_bytes())));
    }

    /// Hash of the manifest with the run id blanked: the deterministic
    /// default run id.
    pub fn derived_run_id(&self) -> String {
        let mut blank = self.clone();
        blank.run_id = String::new();
        let bytes = serde_json::to_vec(&blank).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))[..12].to_string()
    }

    /// Fills the run id from the manifest hash unless one is set.
    pub fn finalize_run_id(&mut self, explicit: Option<&str>) -> String {
        self.run_id = match explicit {
            Some(id) => id.to_string(),
            None => self.derived_run_id(),
        };
        self.run_id.clone()
    }

    /// Writes the manifest next to an output file as
    /// `<output>.manifest.json`.
    pub fn write_alongside(&self, output: &Path) -> Result<PathBuf, ManifestError> {
        let mut name = output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "output".into());
        name.push_str(".manifest.json");
        let path = output.with_file_name(name);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|source| ManifestError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
