//! Whole-file atomic writes and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// File name to SHA-256; `None` until the file is written.
    pub artifacts: BTreeMap<String, Option<String>>,
}

/// Owns the output directory for one command: writes the manifest up front
/// and records each artifact's checksum as it lands.
pub struct RunDir {
    manifest: RunManifest,
}

impl RunDir {
    pub fn create(
        out_dir: &Path,
        command: &str,
        config: serde_json::Value,
        seed: u64,
        artifacts: &[&str],
    ) -> Result<Self> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            seed,
            out_dir: out_dir.to_path_buf(),
            artifacts: artifacts.iter().map(|a| (a.to_string(), None)).collect(),
        };
        let run = Self { manifest };
        run.flush()?;
        Ok(run)
    }

    fn flush(&self) -> Result<()> {
        write_json(&self.manifest.out_dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.manifest.out_dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        self.manifest
            .artifacts
            .insert(name.to_string(), Some(sha256_hex(bytes)));
        self.flush()?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}
