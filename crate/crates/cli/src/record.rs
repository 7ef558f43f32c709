use std::fs;
use std::path::Path;

use ard_core::config::ExperimentConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct Output {
    pub file: String,
    pub sha256: String,
}

/// Everything needed to re-run a command.
#[derive(Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub config: &'a ExperimentConfig,
    pub outputs: Vec<Output>,
    pub wall_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

impl RunRecord<'_> {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(dir.join("run.json"), text + "\n")
    }
}
