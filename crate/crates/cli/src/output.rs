//! Run directory: tracked output files and the reproduction manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use sysid_core::autodiff::Real;
use sysid_core::checkpoint::save_checkpoint;
use sysid_core::model::TransformerParams;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Content hash of one file: SHA-256 over `blob <len>\0<bytes>`.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    seed: u64,
    tool_version: &'a str,
    config: &'a ExperimentConfig,
    outputs: &'a [OutputEntry],
    /// Hash over the sorted `<sha256> <path>` lines of every output.
    content_hash: String,
    wall_time_s: f64,
}

/// Output directory that remembers everything written through it.
pub struct RunDir {
    root: PathBuf,
    entries: Vec<OutputEntry>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn entries(&self) -> &[OutputEntry] {
        &self.entries
    }

    fn track(&mut self, rel: &str) -> Result<(), CliError> {
        let path = self.path(rel);
        let bytes = fs::read(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let entry = OutputEntry { path: rel.to_string(), bytes: bytes.len(), sha256: blob_hash(&bytes) };
        self.entries.retain(|e| e.path != rel);
        self.entries.push(entry);
        Ok(())
    }

    pub fn write(&mut self, rel: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.track(rel)
    }

    pub fn write_json<S: Serialize>(&mut self, rel: &str, value: &S) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(rel, &text)
    }

    pub fn checkpoint<T: Real>(
        &mut self,
        rel: &str,
        params: &TransformerParams<T>,
        meta: serde_json::Value,
    ) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        save_checkpoint(params, meta, &path)?;
        self.track(rel)?;
        Ok(path)
    }

    /// Combined hash of all outputs, independent of write order.
    pub fn content_hash(&self) -> String {
        let mut lines: Vec<String> = self.entries.iter().map(|e| format!("{} {}\n", e.sha256, e.path)).collect();
        lines.sort();
        let mut h = Sha256::new();
        lines.iter().for_each(|l| h.update(l.as_bytes()));
        format!("{:x}", h.finalize())
    }

    pub fn finish(self, cfg: &ExperimentConfig, wall_time_s: f64) -> Result<String, CliError> {
        let mut outputs = self.entries.clone();
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let content_hash = self.content_hash();
        let manifest = Manifest {
            experiment: cfg.experiment.name(),
            seed: cfg.seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            outputs: &outputs,
            content_hash: content_hash.clone(),
            wall_time_s,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        let path = self.path(MANIFEST);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(content_hash)
    }
}

/// CSV from a header and rows of already formatted cells; LF line endings.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
