//! Output directory: artifacts, CSV tables and per-command manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{sha256_json, RunConfig};
use crate::error::{io_err, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub compass_core: String,
    pub compass_cli: String,
}

/// Identities of the dataset and trained model a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keys {
    pub dataset: String,
    pub model: String,
}

impl Keys {
    pub fn new(cfg: &RunConfig, seed: u64) -> Self {
        let b = &cfg.experiment.benchmark;
        Self {
            dataset: sha256_json(&(&b.task, b.n_samples, seed)),
            model: sha256_json(&(b, seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub versions: Versions,
    pub config_sha256: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub keys: Keys,
    pub outputs: Vec<OutputEntry>,
    pub summary: serde_json::Value,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub struct Workspace {
    dir: PathBuf,
    outputs: Vec<OutputEntry>,
}

fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

pub fn manifest_name(command: &str) -> String {
    format!("manifest_{command}.json")
}

impl Workspace {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    /// Hashes a file already written under `name` into the manifest.
    pub fn record(&mut self, name: &str) -> Result<(), CliError> {
        let (sha256, bytes) = sha256_file(&self.path(name))?;
        self.outputs.push(OutputEntry {
            file: name.to_string(),
            sha256,
            bytes,
        });
        Ok(())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(io_err(&path))?;
        self.record(name)
    }

    pub fn read_csv<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, CliError> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(CliError::Runtime(format!("{} not found", path.display())));
        }
        let mut r = csv::Reader::from_path(&path)?;
        r.deserialize().map(|row| row.map_err(CliError::from)).collect()
    }

    pub fn read_manifest(&self, command: &str) -> Option<Manifest> {
        let text = fs::read_to_string(self.path(&manifest_name(command))).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn finish(
        self,
        command: &str,
        cfg: &RunConfig,
        seeds: &[u64],
        summary: serde_json::Value,
    ) -> Result<Manifest, CliError> {
        let seed = seeds.first().copied().unwrap_or_else(|| cfg.seed());
        let manifest = Manifest {
            command: command.to_string(),
            versions: Versions {
                compass_core: compass_core::VERSION.to_string(),
                compass_cli: env!("CARGO_PKG_VERSION").to_string(),
            },
            config_sha256: cfg.sha256(),
            seed,
            seeds: seeds.to_vec(),
            keys: Keys::new(cfg, seed),
            outputs: self.outputs,
            summary,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let path = self.dir.join(manifest_name(command));
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Ok(manifest)
    }
}
