use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::Check;
use crate::config::ExperimentConfig;

/// Written as `manifest.json` next to the outputs of every run. Passing it
/// back as `--config` repeats the run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// `complete`, `check_failed` or `partial`.
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub threads: usize,
    pub seeds: Vec<u64>,
    pub conventions: Conventions,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub outputs: Vec<OutputFile>,
}

#[derive(Debug, Serialize)]
pub struct Conventions {
    /// `Π(E_j - z) = e^{ng} + e^{-ng} - 2`.
    pub level_constant: &'static str,
    pub quantization_phase: &'static str,
    pub spacing: &'static str,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            level_constant: "e^{ng} + e^{-ng} - 2",
            quantization_phase: "n theta_n = 0 mod 2 pi",
            spacing: "n (z_{k+1} - z_k) ~ 2 pi / (i f_n(z_k))",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

impl OutputFile {
    pub fn new(path: &str, contents: &[u8]) -> Self {
        let digest = Sha256::digest(contents);
        let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        OutputFile { path: path.to_owned(), bytes: contents.len(), sha256 }
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn write(dir: &Path, manifest: &RunManifest) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text)
}
