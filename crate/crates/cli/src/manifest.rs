//! Run manifests: one JSON document per command invocation recording
//! what ran, on which inputs, with which effective settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Everything that determined and resulted from one command run.
///
/// `inputs_digest` hashes the output-determining facts only — command,
/// seed, effective config, extra parameters, and the content hashes of
/// all input files. Two runs with equal digests write byte-identical
/// data artifacts (wall-clock columns excepted); the timestamps and
/// paths recorded alongside are documentation and do not enter the
/// digest.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    /// Effective configuration after defaults, config file, and flags.
    pub config: serde_json::Value,
    /// Output-determining parameters that live outside the config.
    pub params: serde_json::Value,
    /// Input file path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 over command, seed, config, params, and input hashes.
    pub inputs_digest: String,
    pub outputs: Vec<String>,
    pub started_utc: String,
    pub finished_utc: String,
}

/// Accumulates a [`RunManifest`] while a command runs.
pub struct ManifestBuilder {
    command: String,
    argv: Vec<String>,
    seed: u64,
    config: serde_json::Value,
    params: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    started_utc: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_else(|_| "unknown".to_string())
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: Vec<String>, seed: u64, config: serde_json::Value) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            argv,
            seed,
            config,
            params: serde_json::Value::Object(Default::default()),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started_utc: now_rfc3339(),
        }
    }

    /// Records output-determining knobs that are not config fields
    /// (horizons, thresholds, window indices, …).
    pub fn params(&mut self, params: serde_json::Value) {
        self.params = params;
    }

    /// Hashes and records an input file.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Data(format!("cannot read input {}: {e}", path.display())))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Records a file this run wrote.
    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn digest(&self) -> String {
        let mut doc = String::new();
        doc.push_str(&self.command);
        doc.push('\n');
        doc.push_str(&self.seed.to_string());
        doc.push('\n');
        doc.push_str(&self.config.to_string());
        doc.push('\n');
        doc.push_str(&self.params.to_string());
        doc.push('\n');
        // BTreeMap iterates sorted by path, so the digest is stable.
        for hash in self.inputs.values() {
            doc.push_str(hash);
            doc.push('\n');
        }
        sha256_hex(doc.as_bytes())
    }

    /// Stamps the end time and writes `<command>.manifest.json` into
    /// `out_dir`, returning the path written.
    pub fn write(self, out_dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            inputs_digest: self.digest(),
            command: self.command,
            argv: self.argv,
            seed: self.seed,
            config: self.config,
            params: self.params,
            inputs: self.inputs,
            outputs: self.outputs,
            started_utc: self.started_utc,
            finished_utc: now_rfc3339(),
        };
        let path = out_dir.join(format!("{}.manifest.json", manifest.command));
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Data(format!("manifest serialization failed: {e}")))?;
        std::fs::write(&path, json + "\n")
            .map_err(|e| CliError::from_io("writing manifest", e))?;
        Ok(path)
    }
}
