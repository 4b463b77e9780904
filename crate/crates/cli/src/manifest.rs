//! Run manifests: the resolved arguments, seed and tool version written as
//! JSON next to each output, enough to rerun the command.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    seed: u64,
    args: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    details: Map<String, Value>,
}

impl Manifest {
    pub fn new<A: Serialize>(command: &str, seed: u64, args: &A) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            args: serde_json::to_value(args).unwrap_or(Value::Null),
            inputs: Vec::new(),
            outputs: Vec::new(),
            details: Map::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        if !self.inputs.iter().any(|x| x == p) {
            self.inputs.push(p.to_path_buf());
        }
    }

    pub fn output(&mut self, p: &Path) {
        if !self.outputs.iter().any(|x| x == p) {
            self.outputs.push(p.to_path_buf());
        }
    }

    pub fn detail<T: Serialize>(&mut self, key: &str, value: &T) {
        self.details.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    /// Path of the manifest belonging to `output`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn write_beside(&self, output: &Path) -> Result<()> {
        let path = Self::path_for(output);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
