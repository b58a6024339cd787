use crate::config::{ConfigFile, MODEL_FORMAT_VERSION};
use crate::error::{CliError, Result};
use serde::Serialize;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Provenance of one command invocation.
///
/// The file holds a `[manifest]` table plus, when the command read a
/// configuration, that configuration with every default written out. Such a
/// manifest is itself a valid `--config` and reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub model_format_version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub output_dir: String,
    /// Input files other than the configuration, in argument order.
    pub inputs: Vec<String>,
    /// Command-specific settings that are not part of the configuration.
    pub parameters: toml::Table,
}

impl RunManifest {
    pub fn new(command: &str, output_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            model_format_version: MODEL_FORMAT_VERSION,
            config_path: None,
            seed: None,
            output_dir: output_dir.display().to_string(),
            inputs: Vec::new(),
            parameters: toml::Table::new(),
        }
    }

    pub fn render(&self, resolved: Option<&ConfigFile>) -> Result<String> {
        let ser = |e: toml::ser::Error| CliError::Input(format!("serializing manifest: {e}"));
        let mut doc = match resolved {
            Some(c) => toml::Table::try_from(c).map_err(ser)?,
            None => toml::Table::new(),
        };
        doc.insert(
            "manifest".into(),
            toml::Value::Table(toml::Table::try_from(self).map_err(ser)?),
        );
        toml::to_string(&doc).map_err(ser)
    }

    pub fn write(&self, dir: &Path, resolved: Option<&ConfigFile>) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.render(resolved)?).map_err(CliError::io(&path))
    }
}
