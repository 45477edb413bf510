//! Run manifests: subcommand, resolved parameters, and SHA-256 of every file read or written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use ida_core::{file_digest, Error, Result};

#[derive(Debug, Serialize)]
pub struct Manifest {
    subcommand: &'static str,
    version: &'static str,
    seed: Option<u64>,
    parameters: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    #[serde(skip)]
    input_paths: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(subcommand: &'static str, parameters: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Manifest {
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            parameters: serde_json::to_value(parameters)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            input_paths: Vec::new(),
        })
    }

    /// Record an input file. Fails with `NotFound` before any work is done if it is missing.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        self.input_paths.push(path.canonicalize()?);
        Ok(())
    }

    /// Refuse to write over an input.
    pub fn guard(&self, out: &Path) -> Result<()> {
        if let Ok(c) = out.canonicalize() {
            if self.input_paths.contains(&c) {
                return Err(Error::InvalidParameter {
                    name: "out",
                    reason: format!("{} is also an input", out.display()),
                });
            }
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.outputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.guard(path)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
