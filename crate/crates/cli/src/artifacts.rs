use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, RunConfig};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

/// An output directory whose files are hashed into `manifest.json`.
pub(crate) struct ArtifactDir {
    dir: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl ArtifactDir {
    pub fn create(dir: PathBuf) -> Result<ArtifactDir, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(ArtifactDir {
            dir,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, label: impl Into<String>, hash: String) {
        self.inputs.insert(label.into(), hash);
    }

    pub fn input_file(&mut self, path: &Path) -> Result<(), CliError> {
        let hash = sha256_hex(&read(path)?);
        self.input(path.display().to_string(), hash);
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(servecurve::Error::from)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Renders into memory with `f`, then writes.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> servecurve::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn finish(self, command: &str, config: &RunConfig) -> Result<PathBuf, CliError> {
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut s = serde_json::to_string_pretty(&m).map_err(servecurve::Error::from)?;
        s.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, s).map_err(|e| CliError::io(&path, e))?;
        Ok(self.dir)
    }
}
