use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run: enough to repeat it and to find what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Effective configuration, defaults filled in.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub duration_secs: f64,
    pub outputs: Vec<PathBuf>,
}

pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}
