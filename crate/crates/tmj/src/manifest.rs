use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io;
use crate::model::TOOL_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<FileRecord> {
        Ok(FileRecord { path: path.display().to_string(), sha256: io::sha256_hex(&io::read_file(path)?) })
    }
}

/// Written next to every command's outputs. `parameters` is a complete
/// config file for the run, so `--config <manifest>` with the recorded
/// inputs reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<String>,
    pub parameters: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, parameters: serde_json::Value) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_path: config_path.map(|p| p.display().to_string()),
            parameters,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        io::write_json(&path, self)?;
        Ok(path)
    }
}
