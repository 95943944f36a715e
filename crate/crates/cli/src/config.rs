//! Run configuration: TOML file, dotted overrides, validation and hashing.

use std::path::{Path, PathBuf};

use compass_core::analysis::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Calibration samples traced along their COMPASS-J line.
    pub samples: usize,
    /// Uniform grid points over `[−β_range, β_range]`.
    pub grid_points: usize,
    /// Relative area changes (percent) located by bisection.
    pub targets_pct: Vec<f64>,
    pub bisection_steps: u32,
    /// Calibration samples checked for nestedness, per method.
    pub nestedness_samples: usize,
    pub nestedness_grid: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            samples: 8,
            grid_points: 81,
            targets_pct: vec![-20.0, -10.0, 0.0, 10.0, 20.0],
            bisection_steps: 50,
            nestedness_samples: 50,
            nestedness_grid: 1024,
        }
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<(), String> {
        if self.grid_points < 2 {
            return Err("sweep.grid_points must be at least 2".into());
        }
        if self.nestedness_grid == 0 {
            return Err("sweep.nestedness_grid must be positive".into());
        }
        if let Some(t) = self.targets_pct.iter().find(|t| !t.is_finite() || **t <= -100.0) {
            return Err(format!("sweep target {t}% is not reachable"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    /// First configured seed; single-run commands use it.
    pub fn seed(&self) -> u64 {
        self.experiment.seeds[0]
    }

    /// Hash of everything that determines numeric outputs.
    pub fn sha256(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        sha256_json(&c)
    }
}

/// Command-line replacements applied after the file is read.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// `dotted.key=value`; the value is read as TOML, falling back to a string.
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub splits: Option<usize>,
}

pub fn sha256_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("config types serialize");
    hex::encode(Sha256::digest(bytes))
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let slot = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = slot
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, CliError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Config(e.to_string().replace('\n', " ")))?;
    for s in &ov.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {s:?} is not key=value")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    if let Some(seed) = ov.seed {
        let seed =
            i64::try_from(seed).map_err(|_| CliError::Config(format!("seed {seed} exceeds the TOML integer range")))?;
        set_path(
            &mut table,
            "experiment.seeds",
            toml::Value::Array(vec![toml::Value::Integer(seed)]),
        )?;
    }
    if let Some(a) = ov.alpha {
        set_path(
            &mut table,
            "experiment.alphas",
            toml::Value::Array(vec![toml::Value::Float(a)]),
        )?;
    }
    if let Some(n) = ov.splits {
        set_path(&mut table, "experiment.n_splits", toml::Value::Integer(n as i64))?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string().replace('\n', " ")))?;
    cfg.experiment.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.sweep.validate().map_err(CliError::Config)?;
    Ok(cfg)
}
