use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Record of one command invocation, written next to its outputs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name; `replay` parses them again.
    pub argv: Vec<String>,
    /// Every effective setting, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            tool: "houston".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: argv.to_vec(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}
