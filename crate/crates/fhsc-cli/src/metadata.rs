//! Run metadata: everything needed to reproduce a run exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::CliResult;
use crate::io::{sha256_file, sha256_hex};

/// An input file and the digest of its bytes.
#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// Contents of `metadata.json`.
///
/// `config` is the fully resolved command configuration (flags, config file
/// and defaults merged) and `config_hash` the SHA-256 of its compact JSON
/// form, so two runs with the same hash and input digests are identical.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: String,
    pub cli_version: String,
    pub library_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub config_file: Option<InputFile>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub rng_algorithm: String,
    /// Worker-thread cap from `SAE_THREADS`, if set.
    pub threads: Option<usize>,
}

impl Metadata {
    pub fn new<T: Serialize>(command: &str, config: &T, threads: Option<usize>) -> Self {
        let config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Metadata {
            tool: "fhsc".into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
            library_version: fhsc::VERSION.into(),
            command: command.into(),
            config,
            config_hash,
            config_file: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
            rng_algorithm: crate::commands::rng_algorithm().into(),
            threads,
        }
    }

    fn file(role: &str, path: &Path) -> CliResult<InputFile> {
        Ok(InputFile {
            role: role.into(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }

    pub fn config_file(&mut self, path: &Path) -> CliResult<()> {
        self.config_file = Some(Self::file("config", path)?);
        Ok(())
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CliResult<()> {
        self.inputs.push(Self::file(role, path)?);
        Ok(())
    }

    pub fn outputs<const N: usize>(&mut self, names: [&str; N]) {
        self.outputs.extend(names.iter().map(|s| s.to_string()));
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.into(), seed);
    }
}
