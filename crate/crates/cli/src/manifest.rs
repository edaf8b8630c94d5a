//! Reproducibility manifest written next to every run's artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use msnas_core::search::hex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// No timestamps or host data, so identical runs give identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    /// Digest of the dataset manifest, when a dataset was read.
    pub dataset_digest: Option<String>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_text: &str) -> Self {
        RunManifest {
            format_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_digest: sha256_hex(config_text.as_bytes()),
            dataset_digest: None,
            outputs: BTreeMap::new(),
        }
    }

    pub fn with_dataset(mut self, dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(msnas_core::tasks::data::MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| msnas_core::Error::io(&path, e))?;
        self.dataset_digest = Some(sha256_hex(&bytes));
        Ok(self)
    }

    /// Writes `bytes` to `dir/name` and records its digest.
    pub fn write_output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| msnas_core::Error::io(&path, e))?;
        self.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let body = toml::to_string(self).expect("manifest serializes");
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, format!("# msnas run manifest v{MANIFEST_VERSION}\n{body}"))
            .map_err(|e| msnas_core::Error::io(&path, e))?;
        Ok(())
    }
}
