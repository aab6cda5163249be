//! Run manifests and digest-gated stage execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gallon::tensorcore::checkpoint::write_atomic;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub version: String,
    /// The configuration slice this stage depends on.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input name to SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    /// Output path, relative to the stage directory, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Digest of stage, version, config slice, seeds and inputs; equal keys
    /// with intact outputs mean the stage is up to date.
    pub key: String,
}

pub fn version() -> String {
    match option_env!("GALLON_GIT_DESCRIBE") {
        Some(d) => format!("{} ({d})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// A consumed file and what to tell the user when it is missing.
pub struct Input {
    pub name: String,
    pub path: PathBuf,
    pub hint: String,
}

impl Input {
    /// An artifact written by another subcommand.
    pub fn stage(name: &str, path: PathBuf, producer: &str) -> Input {
        Input {
            name: name.into(),
            path,
            hint: format!("run `gallon {producer}` first"),
        }
    }

    pub fn external(name: &str, path: PathBuf, hint: &str) -> Input {
        Input {
            name: name.into(),
            path,
            hint: hint.into(),
        }
    }
}

pub struct Stage<'a> {
    pub name: &'a str,
    pub dir: PathBuf,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Input>,
    /// Digests that are recorded but do not gate re-runs.
    pub extra_inputs: BTreeMap<String, String>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    UpToDate,
}

fn key(stage: &str, config: &serde_json::Value, seeds: &BTreeMap<String, u64>, inputs: &BTreeMap<String, String>) -> String {
    let payload = serde_json::json!({
        "stage": stage,
        "version": version(),
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
    });
    sha256_hex(payload.to_string().as_bytes())
}

fn outputs_intact(dir: &Path, outputs: &BTreeMap<String, String>) -> bool {
    outputs.iter().all(|(rel, digest)| file_digest(&dir.join(rel)).is_ok_and(|d| &d == digest))
}

impl Stage<'_> {
    /// Runs `body` unless a manifest with the same key lists outputs that
    /// are all present and unmodified. Every file in the stage directory
    /// after `body` counts as an output; outputs are written atomically, so
    /// a failed body leaves earlier artifacts intact.
    pub fn run(self, body: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<StageStatus, CliError> {
        let mut inputs = BTreeMap::new();
        for input in &self.inputs {
            let digest = file_digest(&input.path)
                .map_err(|e| CliError::Data(format!("missing input {}: {e} ({})", input.path.display(), input.hint)))?;
            inputs.insert(input.name.clone(), digest);
        }
        let key = key(self.name, &self.config, &self.seeds, &inputs);
        let manifest_path = self.dir.join(MANIFEST_FILE);
        if let Ok(bytes) = std::fs::read(&manifest_path) {
            if let Ok(old) = serde_json::from_slice::<RunManifest>(&bytes) {
                if old.key == key && outputs_intact(&self.dir, &old.outputs) {
                    log::info!("{}: up to date", self.name);
                    return Ok(StageStatus::UpToDate);
                }
            }
        }
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::Data(format!("{}: {e}", self.dir.display())))?;
        log::info!("{}: running", self.name);
        body(&self.dir)?;
        let mut outputs = BTreeMap::new();
        let listing = std::fs::read_dir(&self.dir).map_err(|e| CliError::Other(format!("{}: {e}", self.dir.display())))?;
        for entry in listing {
            let entry = entry?;
            let rel = entry.file_name().to_string_lossy().into_owned();
            if rel == MANIFEST_FILE || !entry.file_type()?.is_file() {
                continue;
            }
            outputs.insert(rel, file_digest(&entry.path())?);
        }
        inputs.extend(self.extra_inputs);
        let manifest = RunManifest {
            stage: self.name.to_string(),
            version: version(),
            config: self.config,
            seeds: self.seeds,
            inputs,
            outputs,
            key,
        };
        write_json(&manifest_path, &manifest)?;
        log::info!("{}: wrote {}", self.name, manifest_path.display());
        Ok(StageStatus::Ran)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}
