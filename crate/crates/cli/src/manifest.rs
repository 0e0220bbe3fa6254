//! Per-stage run manifest: inputs hashed, config echoed, versions, outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub stage: String,
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    /// File name → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub repairs: Vec<serde_json::Value>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn display_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

impl Manifest {
    pub fn new(stage: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            stage: stage.to_string(),
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            warnings: vec![],
            repairs: vec![],
        }
    }

    pub fn add_inputs(&mut self, files: &[PathBuf]) -> io::Result<()> {
        for f in files {
            self.inputs.insert(display_name(f), sha256_file(f)?);
        }
        Ok(())
    }

    pub fn add_outputs(&mut self, files: &[PathBuf]) -> io::Result<()> {
        for f in files {
            self.outputs.insert(display_name(f), sha256_file(f)?);
        }
        Ok(())
    }

    /// Writes `manifest_<stage>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(format!("manifest_{}.json", self.stage.replace('-', "_")));
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
