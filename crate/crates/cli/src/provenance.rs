//! Run configuration recorded in every artifact.
//!
//! CSV artifacts start with `#` comment lines; JSON artifacts carry the same
//! object under `provenance`. Nothing time-dependent is recorded, so
//! repeating a run reproduces its artifacts byte for byte.

use std::fs;
use std::path::Path;

use aqnmf_core::{ClassifierConfig, NmfMode, Pollutant};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunConfig {
    pub tool: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pollutant: Option<Pollutant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_range: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<NmfMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub impute: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ClassifierConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Command-specific settings that have no dedicated field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

impl RunConfig {
    pub fn new(command: &str, seed: u64) -> Self {
        RunConfig {
            tool: format!("aqnmf {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            seed,
            ..Default::default()
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    /// `# run-config: {...}` line for CSV artifacts, newline-terminated.
    pub fn csv_header(&self) -> String {
        format!("# run-config: {}\n", serde_json::to_string(self).expect("run config serializes"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

/// Writes a new artifact, refusing to overwrite any of the run's inputs.
pub fn write_artifact(path: &Path, contents: &[u8], inputs: &[&Path]) -> Result<(), CliError> {
    for input in inputs {
        let same = match (fs::canonicalize(path), fs::canonicalize(input)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        if same {
            return Err(CliError::Usage(format!(
                "output {} would overwrite an input file",
                path.display()
            )));
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}
