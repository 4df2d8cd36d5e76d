//! Run manifests: full configuration, tool version and SHA-256 hashes of
//! every input and output file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const TOOL: &str = "bsm";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: ExperimentConfig,
    /// Input path (as given) to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file name, relative to the output directory, to content hash.
    pub outputs: BTreeMap<String, String>,
    pub results: Value,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Manifest {
            tool: TOOL,
            version: VERSION,
            command: command.to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            results: Value::Null,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Records a file already written into `dir`.
    pub fn add_output(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        self.outputs
            .insert(name.to_string(), sha256_file(&dir.join(name))?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_known_content() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let mut m = Manifest::new("design", &ExperimentConfig::default());
        m.add_output(dir.path(), "a.txt").unwrap();
        assert_eq!(
            m.outputs["a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(m.add_output(dir.path(), "missing").is_err());
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        let back: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back["version"], VERSION);
        assert_eq!(back["config"]["magls"]["max_iter"], 100_000);
    }
}
