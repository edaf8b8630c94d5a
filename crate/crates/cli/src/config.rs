//! Run configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use msnas_core::search::SearchConfig;
use msnas_core::tasks::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that overrides every configured output directory.
pub const OUTPUT_DIR_ENV: &str = "MSNAS_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "msnas-out";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// `[search]`, `[train]` and `[paths]` sections; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub search: SearchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Field-level validation of both sections.
    pub fn validate(&self) -> Result<(), CliError> {
        self.search
            .validate()
            .map_err(|e| CliError::Config(format!("[search] {e}")))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("[train] {e}")))?;
        Ok(())
    }

    /// Dataset directory from the flag or the file; it must exist.
    pub fn dataset_dir(&self, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        let dir = flag
            .map(Path::to_path_buf)
            .or_else(|| self.paths.dataset.clone())
            .ok_or_else(|| CliError::Config("no dataset directory given (use --dataset or [paths] dataset)".into()))?;
        if !dir.is_dir() {
            return Err(CliError::Config(format!("dataset directory {} does not exist", dir.display())));
        }
        Ok(dir)
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        resolve_output(flag, self.paths.output.as_deref())
    }
}

/// Flag, then environment, then configured value, then the default.
pub fn resolve_output(flag: Option<&Path>, configured: Option<&Path>) -> PathBuf {
    if let Some(f) = flag {
        return f.to_path_buf();
    }
    if let Some(env) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    configured.map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR), Path::to_path_buf)
}
