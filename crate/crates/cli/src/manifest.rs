//! Output files and the run manifest written next to them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, Stage};

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub argv: Vec<String>,
    pub seed: u64,
    /// Resolved flags and file-derived settings.
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Command-specific summary values.
    pub results: serde_json::Value,
    pub duration_secs: f64,
}

/// Collects inputs and outputs of one command run.
pub struct Run {
    dir: PathBuf,
    started: Instant,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
}

impl Run {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).stage("create output directory")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// Reads an input file and records its checksum.
    pub fn read(&mut self, path: &Path) -> Result<String, CliError> {
        let text = fs::read_to_string(path).stage("read input")?;
        self.inputs.push(Artifact {
            path: path.display().to_string(),
            sha256: digest(text.as_bytes()),
        });
        Ok(text)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).stage("write output")?;
        self.outputs.push(Artifact {
            path: path.display().to_string(),
            sha256: digest(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).stage("serialize output")?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(
        self,
        command: &str,
        seed: u64,
        config: serde_json::Value,
        results: serde_json::Value,
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            seed,
            config,
            inputs: self.inputs,
            outputs: self.outputs,
            results,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).stage("serialize manifest")?;
        text.push('\n');
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes()).stage("write manifest")
    }
}
