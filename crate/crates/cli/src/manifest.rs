//! Run manifests: one `manifest.json` per output directory recording what
//! produced it.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Hash over every input file, `None` for commands without inputs.
    pub input_sha256: Option<String>,
    pub started_at: String,
    pub finished_at: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn config_hash(cfg: &PipelineConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex(&Sha256::digest(&bytes))
}

fn collect_files(root: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if root.is_file() {
        out.push(root.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(root)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// SHA-256 over the relative path and contents of every file under the
/// inputs (manifests excluded), in sorted order.
pub fn inputs_hash(inputs: &[&Path]) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for root in inputs {
        let mut files = Vec::new();
        collect_files(root, &mut files).map_err(|e| CliError::Data(format!("{}: {e}", root.display())))?;
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0u8]);
            let bytes = fs::read(&f).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(hex(&h.finalize()))
}

/// Started when a command begins, written when it finishes.
pub struct ManifestBuilder {
    command: String,
    seed: u64,
    config_sha256: String,
    input_sha256: Option<String>,
    started: DateTime<Utc>,
}

impl ManifestBuilder {
    pub fn start(command: &str, cfg: &PipelineConfig, inputs: &[&Path]) -> Result<Self, CliError> {
        let input_sha256 = if inputs.is_empty() { None } else { Some(inputs_hash(inputs)?) };
        Ok(ManifestBuilder {
            command: command.to_string(),
            seed: cfg.seed,
            config_sha256: config_hash(cfg),
            input_sha256,
            started: Utc::now(),
        })
    }

    pub fn finish(self, out_dir: &Path) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            tool: "affkp".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            seed: self.seed,
            config_sha256: self.config_sha256,
            input_sha256: self.input_sha256,
            started_at: timestamp(self.started),
            finished_at: timestamp(Utc::now()),
        };
        affkp_core::io::write_json(&out_dir.join(MANIFEST_FILE), &manifest).map_err(CliError::output)?;
        Ok(manifest)
    }
}
