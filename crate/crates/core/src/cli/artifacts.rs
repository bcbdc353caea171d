use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance of one verb invocation. Carries no timestamps so that reruns
/// with the same config and seed are byte-identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub verb: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, InputRecord>,
    /// File name → sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

/// Output directory that checksums everything written to or read through it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    inputs: BTreeMap<String, InputRecord>,
    artifacts: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.artifacts.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    /// Reads an upstream file and records its checksum.
    pub fn read_input(&mut self, label: &str, path: &Path) -> Result<String> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(
            label.to_string(),
            InputRecord {
                path: path.to_path_buf(),
                sha256: sha256_hex(text.as_bytes()),
            },
        );
        Ok(text)
    }

    pub fn record_input(&mut self, label: &str, path: &Path) -> Result<()> {
        self.read_input(label, path).map(|_| ())
    }

    /// The config hash ignores the output directory: where results land is
    /// not part of the experiment.
    pub fn manifest(&self, verb: &str, cfg: &PipelineConfig) -> Manifest {
        let mut hashed = cfg.clone();
        hashed.paths.output = None;
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            verb: verb.to_string(),
            config_sha256: sha256_hex(hashed.to_toml().as_bytes()),
            seed: cfg.seed,
            inputs: self.inputs.clone(),
            artifacts: self.artifacts.clone(),
        }
    }

    /// Writes `manifest_<verb>.json`.
    pub fn finish(&self, verb: &str, cfg: &PipelineConfig) -> Result<()> {
        let m = self.manifest(verb, cfg);
        let p = self.path(&format!("manifest_{verb}.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&p, e))
    }
}
