//! Run manifests: what was run, with which inputs, and what it wrote.

use std::fs;
use std::path::Path as FsPath;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use imbp_core::Ensemble;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{self, Params};
use crate::config::LoadedConfig;
use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_digest: String,
    pub params: Params,
    pub workers: Option<usize>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    /// `ok`, or the error that set the exit code.
    pub status: String,
    pub files: Vec<FileEntry>,
    pub config: serde_json::Value,
}

/// Runs the command, writes its files and the manifest, and returns the
/// verdict of the run.
pub fn execute(
    loaded: &LoadedConfig,
    params: &Params,
    out: &FsPath,
    workers: Option<usize>,
) -> Result<(), CliError> {
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let outputs = commands::run(&loaded.config, params, &Ensemble::new(workers))?;
    fs::create_dir_all(out)?;
    let mut files = Vec::with_capacity(outputs.files.len());
    for (name, bytes) in &outputs.files {
        fs::write(out.join(name), bytes)?;
        files.push(FileEntry {
            name: name.clone(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = RunManifest {
        tool: "imbp".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: params.command.clone(),
        seed: params.seed,
        config_digest: loaded.digest.clone(),
        params: params.clone(),
        workers,
        started_unix,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        status: match &outputs.verdict {
            Ok(()) => "ok".into(),
            Err(e) => e.to_string(),
        },
        files,
        config: loaded.value.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(out.join(MANIFEST_NAME), bytes)?;
    outputs.verdict
}

pub fn read(path: &FsPath) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| CliError::Config(format!("manifest field `{}`: {}", e.path(), e.inner())))
}

/// Repeats the run recorded in `manifest` into `out`.
pub fn rerun(manifest: &FsPath, out: &FsPath, workers: Option<usize>) -> Result<(), CliError> {
    let m = read(manifest)?;
    let loaded = LoadedConfig::from_value(m.config)?;
    if loaded.digest != m.config_digest {
        return Err(CliError::Config("config: embedded config does not match its digest".into()));
    }
    execute(&loaded, &m.params, out, workers)
}
