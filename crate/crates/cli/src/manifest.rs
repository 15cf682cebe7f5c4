//! Per-command manifests: config echo, root seed and content hashes of
//! inputs and outputs.

use std::fs;
use std::path::{Path, PathBuf};

use gotjepa::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    /// SHA-256 over `blob <len>\0` followed by the file bytes.
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub command: String,
    pub root_seed: u64,
    pub config_hash: String,
    pub config: String,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

/// Git-style blob hash of one file; directories hash their files in name order.
pub fn content_hash(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    hash_into(path, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

fn hash_into(path: &Path, h: &mut Sha256) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            h.update(e.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
            hash_into(&e, h)?;
        }
        return Ok(());
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    h.update(format!("blob {}\0", bytes.len()));
    h.update(&bytes);
    Ok(())
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            version: MANIFEST_VERSION,
            command: command.to_string(),
            root_seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.to_toml(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(Artifact {
            path: path.to_path_buf(),
            content_hash: content_hash(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(Artifact {
            path: path.to_path_buf(),
            content_hash: content_hash(path)?,
        });
        Ok(())
    }

    /// Writes `<dir>/<command>.manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
