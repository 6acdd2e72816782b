use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub role: String,
    pub path: PathBuf,
    /// `sha256("blob <len>\0" ++ contents)`, as git hashes blobs.
    pub blob_sha256: String,
}

/// Record of one run directory. Written before any other artifact and
/// rewritten when the run finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: Status,
    pub seed: u64,
    /// The effective configuration in its `key = value` text form.
    pub config: String,
    pub inputs: Vec<InputFile>,
    /// Hash over every input's role, path and blob hash.
    pub input_hash: String,
    pub sdi_table: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Every file the run wrote, relative to the run directory.
    pub artifacts: Vec<PathBuf>,
}

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: String, inputs: &[(&str, &Path)]) -> Result<Self> {
        let mut files = Vec::with_capacity(inputs.len());
        let mut combined = Sha256::new();
        for (role, path) in inputs {
            let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
            let blob = blob_hash(&bytes);
            combined.update(format!("{role}\t{}\t{blob}\n", path.display()).as_bytes());
            files.push(InputFile {
                role: role.to_string(),
                path: path.to_path_buf(),
                blob_sha256: blob,
            });
        }
        Ok(RunManifest {
            command: command.to_string(),
            status: Status::Incomplete,
            seed,
            config,
            inputs: files,
            input_hash: hex(&combined.finalize()),
            sdi_table: None,
            checkpoint: None,
            artifacts: Vec::new(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE_NAME);
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))
    }

    pub fn record(&mut self, artifact: &str) {
        self.artifacts.push(PathBuf::from(artifact));
    }
}
