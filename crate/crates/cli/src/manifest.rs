//! Run manifests: what was run, on which data, with which settings.
//!
//! The hash covers the command, hyperparameters, dataset paths and seed, so
//! two runs with identical settings share it; timings and results are
//! recorded alongside but not hashed.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use kge::EvalReport;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Serialize, Debug, Clone)]
struct Identity {
    command: String,
    hyperparameters: BTreeMap<String, Value>,
    datasets: BTreeMap<String, String>,
    seed: u64,
}

#[derive(Serialize, Debug, Clone)]
pub struct RunManifest {
    #[serde(flatten)]
    identity: Identity,
    pub hash: String,
    pub wall_time_seconds: f64,
    pub results: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            identity: Identity {
                command: command.to_owned(),
                hyperparameters: BTreeMap::new(),
                datasets: BTreeMap::new(),
                seed,
            },
            hash: String::new(),
            wall_time_seconds: 0.0,
            results: Vec::new(),
        }
        .rehash()
    }

    pub fn param(mut self, name: &str, value: impl Serialize) -> Self {
        let value = serde_json::to_value(value).expect("hyperparameters serialize");
        self.identity.hyperparameters.insert(name.to_owned(), value);
        self.rehash()
    }

    pub fn dataset(mut self, role: &str, path: &Path) -> Self {
        self.identity
            .datasets
            .insert(role.to_owned(), path.display().to_string());
        self.rehash()
    }

    fn rehash(mut self) -> Self {
        let canonical = serde_json::to_vec(&self.identity).expect("manifest serializes");
        self.hash = hex::encode(Sha256::digest(&canonical));
        self
    }

    /// The report as a TSV line with the manifest hash appended; also kept
    /// in the manifest's results.
    pub fn line(&mut self, report: &EvalReport) -> String {
        let line = format!("{}\t{}", report.to_tsv(), self.hash);
        self.results.push(line.clone());
        line
    }

    /// Appends arbitrary trailing columns after the hash.
    pub fn line_with(&mut self, report: &EvalReport, extra: &str) -> String {
        let line = format!("{}\t{}\t{extra}", report.to_tsv(), self.hash);
        self.results.push(line.clone());
        line
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_json() + "\n")
            .with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `<model>.manifest.json`
pub fn sidecar(model: &Path, suffix: &str) -> std::path::PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(suffix);
    name.into()
}
