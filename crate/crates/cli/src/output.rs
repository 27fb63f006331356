//! File emission and the run manifest.

use crate::error::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub toolkit_version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Effective parameters after command-line selections.
    pub selections: serde_json::Value,
    pub files: Vec<FileEntry>,
}

/// Writes outputs under one directory and records each in the manifest.
pub struct Emitter {
    dir: PathBuf,
    files: Vec<FileEntry>,
    started: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Emitter {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: unix_now(),
        })
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), data)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: format!("{:x}", Sha256::digest(data)),
            bytes: data.len(),
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut data = serde_json::to_vec_pretty(value)?;
        data.push(b'\n');
        self.bytes(name, &data)
    }

    pub fn csv<R, I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let data = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
        self.bytes(name, &data)
    }

    pub fn finish(self, command: &str, config_hash: String, seed: u64, selections: serde_json::Value) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix: self.started,
            finished_unix: unix_now(),
            selections,
            files: self.files,
        };
        let mut data = serde_json::to_vec_pretty(&manifest)?;
        data.push(b'\n');
        std::fs::write(self.dir.join(MANIFEST), data)?;
        Ok(manifest)
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
