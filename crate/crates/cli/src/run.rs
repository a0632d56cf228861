//! Run bookkeeping shared by all commands.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use acfnet::zoo::checkpoint::write_atomic;
use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::Common;

pub enum Outcome {
    Complete,
    /// Number of inputs that failed while the rest succeeded.
    Partial(usize),
}

pub enum CliError {
    /// Bad flags, configuration or mismatched inputs; nothing was run.
    Usage(String),
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

pub type CliResult = Result<Outcome, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Written as `run_manifest.json` next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub tool_version: String,
    pub settings: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, common: &Common, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_path: common.config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            settings: serde_json::Value::Null,
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        write_json(&dir.join("run_manifest.json"), self)
    }
}

/// Prepares the output directory and thread pool and resolves the seed.
pub fn setup(common: &Common) -> Result<u64, CliError> {
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Failed(e.into()))?;
    }
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let seed = common.seed.unwrap_or_else(rand::random);
    if common.seed.is_none() {
        log::info!("no --seed given, using {seed}");
    }
    Ok(seed)
}

pub fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut bytes = Vec::new();
    for row in rows {
        bytes.extend(serde_json::to_vec(row)?);
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}
