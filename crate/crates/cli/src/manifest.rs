use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written next to a command's primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub args: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest { path: path.to_owned(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

pub struct ManifestBuilder {
    command: String,
    args: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new<A: Serialize>(command: &str, args: &A, seed: Option<u64>) -> Result<Self> {
        Ok(ManifestBuilder {
            command: command.to_owned(),
            args: serde_json::to_value(args)?,
            seed,
            inputs: Vec::new(),
            start: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    /// Digests `outputs` and writes `<primary>.manifest.json`.
    pub fn finish(self, primary: &Path, outputs: &[&Path]) -> Result<PathBuf> {
        let outputs = outputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            args: self.args,
            seed: self.seed,
            inputs: self.inputs,
            outputs,
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
        };
        let path = manifest_path(primary);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    primary.with_file_name(name)
}
