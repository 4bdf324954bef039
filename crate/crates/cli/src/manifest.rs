use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one run: the subcommand, its resolved configuration and the
/// content hashes of every file read and written. Contains no timestamps,
/// so identical runs write identical manifests.
#[derive(Debug, Default, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub results: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn new(command: &str, config: String) -> Manifest {
        Manifest {
            command: command.to_string(),
            config,
            ..Manifest::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn result(&mut self, key: &str, value: impl ToString) {
        self.results.insert(key.to_string(), value.to_string());
    }

    /// Writes to `explicit`, else next to the alphabetically first output
    /// as `<output>.manifest.json`. Runs without outputs and without an
    /// explicit path write nothing.
    pub fn write(&self, explicit: Option<&Path>) -> Result<Option<PathBuf>> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => match self.outputs.keys().next() {
                Some(first) => PathBuf::from(format!("{first}.manifest.json")),
                None => return Ok(None),
            },
        };
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(Some(path))
    }
}
