//! Per-run provenance: every file read or written goes through [`Run`], which
//! hashes it and records it in the manifest written when the run ends.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A failure the CLI reports under its own name rather than a library one.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    fn of(path: &Path, data: &[u8]) -> Self {
        FileRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(data),
            bytes: data.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    /// Arguments after defaults and config files are resolved.
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub struct Run {
    pub subcommand: String,
    started_at: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    /// Hashes from an earlier manifest that inputs must still match.
    expected: HashMap<String, String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Run {
    pub fn new(subcommand: &str) -> Self {
        Run {
            subcommand: subcommand.to_string(),
            started_at: now(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            expected: HashMap::new(),
        }
    }

    /// Loads an earlier manifest whose input hashes this run must match.
    pub fn expect_inputs_of(&mut self, manifest: &Path) -> anyhow::Result<()> {
        let text = self.read_untracked(manifest)?;
        let old: RunManifest = serde_json::from_slice(&text)
            .map_err(|e| CliError::new("InvalidInput", format!("{}: {e}", manifest.display())))?;
        self.expected = old.inputs.into_iter().map(|r| (r.path, r.sha256)).collect();
        Ok(())
    }

    fn read_untracked(&self, path: &Path) -> anyhow::Result<Vec<u8>> {
        std::fs::read(path).map_err(|e| {
            let kind = if e.kind() == std::io::ErrorKind::NotFound {
                "InputNotFound"
            } else {
                "IoError"
            };
            CliError::new(kind, format!("{}: {e}", path.display())).into()
        })
    }

    pub fn read(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let data = self.read_untracked(path)?;
        let record = FileRecord::of(path, &data);
        if let Some(want) = self.expected.get(&record.path) {
            if *want != record.sha256 {
                return Err(CliError::new(
                    "ManifestMismatch",
                    format!("{} changed since the recorded run", record.path),
                )
                .into());
            }
        }
        self.inputs.push(record);
        Ok(data)
    }

    /// Writes to `path`, or to stdout when there is none.
    pub fn write(&mut self, path: Option<&Path>, data: &[u8]) -> anyhow::Result<()> {
        match path {
            Some(p) => {
                std::fs::write(p, data)
                    .map_err(|e| CliError::new("IoError", format!("{}: {e}", p.display())))?;
                self.outputs.push(FileRecord::of(p, data));
            }
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(data)?;
                out.flush()?;
                self.outputs.push(FileRecord::of(Path::new("-"), data));
            }
        }
        Ok(())
    }

    pub fn finish(self, threads: usize, error: Option<String>) -> RunManifest {
        RunManifest {
            subcommand: self.subcommand,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at,
            finished_at: now(),
            status: if error.is_some() { "error" } else { "ok" }.to_string(),
            error,
            seed: self.seed,
            threads,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
        }
    }
}
