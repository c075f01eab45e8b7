//! Run manifests: what produced an artifact, hashed so outputs can be tied
//! back to their inputs.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    /// SHA-256 of the config file contents.
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    /// Input paths with the SHA-256 of their contents.
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<String>,
    /// Subcommand options that shape the output.
    pub options: serde_json::Value,
    pub version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(subcommand: &str, options: serde_json::Value) -> Self {
        RunManifest {
            subcommand: subcommand.to_owned(),
            config: None,
            config_sha256: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            options,
            version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        let digest = file_sha256(path)?;
        self.inputs.push((path.display().to_string(), digest));
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("manifest serializes")
                .as_bytes(),
        )
    }

    /// Writes `<artifact>.manifest.json` next to `artifact`.
    pub fn write_beside(&self, artifact: &Path) -> Result<()> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".manifest.json");
        let body = serde_json::json!({ "hash": self.hash(), "manifest": self });
        fs::write(&name, serde_json::to_string_pretty(&body)? + "\n")
            .with_context(|| format!("writing {}", Path::new(&name).display()))
    }
}
