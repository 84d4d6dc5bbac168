//! Run manifests and config-file loading shared by all subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or config values; reported with usage and exit status 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

pub type CliResult<T> = Result<T, CliError>;

/// Record of one invocation. Passing it back through `--config` reruns the
/// same computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Fully resolved parameters (flags, config file and defaults merged).
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub out_dir: PathBuf,
    /// Files written, relative to `out_dir`.
    pub artifacts: Vec<PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn start(subcommand: &str, params: &impl Serialize, seed: Option<u64>, out_dir: &Path) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            params: serde_json::to_value(params).expect("params serialize"),
            seed,
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            out_dir: out_dir.to_path_buf(),
            artifacts: Vec::new(),
            version: pselab_core::VERSION.to_string(),
        }
    }

    /// Writes `contents` to `out_dir/name` and records it as an artifact.
    pub fn write_artifact(&mut self, name: impl AsRef<Path>, contents: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.out_dir.join(name.as_ref());
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(name.as_ref().to_path_buf());
        Ok(path)
    }

    pub fn record_artifact(&mut self, name: impl Into<PathBuf>) {
        self.artifacts.push(name.into());
    }

    pub fn finish(mut self) -> anyhow::Result<PathBuf> {
        self.finished_unix_ms = now_ms();
        let path = self.out_dir.join(RUN_MANIFEST_FILE);
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Parameters from `--config`, or defaults when absent. The file is either a
/// bare parameter object or a run manifest of the same subcommand.
pub fn load_params<P: DeserializeOwned + Default>(path: Option<&Path>, subcommand: &str) -> CliResult<P> {
    let Some(path) = path else {
        return Ok(P::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {} is not JSON: {e}", path.display())))?;
    if let Some(sub) = value.get("subcommand") {
        if sub.as_str() != Some(subcommand) {
            return Err(CliError::Usage(format!(
                "config {} is a manifest for {sub}, not {subcommand:?}",
                path.display()
            )));
        }
        value = value.get("params").cloned().unwrap_or(serde_json::Value::Null);
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
