//! Run manifests: written before any other output so an interrupted run
//! leaves a manifest with no end timestamp.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub ended_at: Option<String>,
    pub version: String,
    #[serde(skip)]
    path: PathBuf,
}

impl RunManifest {
    /// Create and immediately persist the manifest with no end timestamp.
    pub fn start(
        subcommand: &str,
        config: serde_json::Value,
        seed: u64,
        inputs: Vec<String>,
        path: impl AsRef<Path>,
    ) -> Result<Self, CliError> {
        let manifest = Self {
            subcommand: subcommand.to_string(),
            config,
            seed,
            inputs,
            outputs: Vec::new(),
            started_at: chrono::Utc::now().to_rfc3339(),
            ended_at: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            path: path.as_ref().to_path_buf(),
        };
        manifest.write()?;
        Ok(manifest)
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    /// Stamp the end time and persist the final manifest.
    pub fn finish(mut self) -> Result<(), CliError> {
        self.ended_at = Some(chrono::Utc::now().to_rfc3339());
        self.write()
    }

    fn write(&self) -> Result<(), CliError> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Data(format!("manifest serialization: {e}")))?;
        std::fs::write(&self.path, json)?;
        Ok(())
    }
}
