//! Archived command runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::{FiniteReport, KeyrateRow};
use crate::sim::SimReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RecordOutput {
    Keyrate(Vec<KeyrateRow>),
    Finite(FiniteReport),
    Simulation(SimReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config: RunConfig,
    /// Command-specific inputs that are not part of the config (seed,
    /// packet count, budget overrides, ...).
    pub inputs: BTreeMap<String, String>,
    pub inputs_hash: String,
    pub output: RecordOutput,
    pub timestamp_unix_s: u64,
    pub elapsed_s: Option<f64>,
}

/// Git-style object hash (`blob <len>\0<content>`) over SHA-256, taken
/// over the canonical text of the command, config and extra inputs.
pub fn inputs_hash(command: &str, config: &RunConfig, inputs: &BTreeMap<String, String>) -> String {
    let mut canonical = format!("command = {command}\n");
    canonical.push_str(&config.to_text());
    for (k, v) in inputs {
        canonical.push_str(&format!("input.{k} = {v}\n"));
    }
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", canonical.len()).as_bytes());
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

impl RunRecord {
    pub fn new(
        command: &str,
        config: &RunConfig,
        inputs: BTreeMap<String, String>,
        output: RecordOutput,
        elapsed_s: Option<f64>,
    ) -> Self {
        let timestamp_unix_s = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command: command.to_string(),
            inputs_hash: inputs_hash(command, config, &inputs),
            config: config.clone(),
            inputs,
            output,
            timestamp_unix_s,
            elapsed_s,
        }
    }

    /// Writes `<dir>/<inputs_hash>.json` and returns its path.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.json", self.inputs_hash));
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    pub fn read_from(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotic::RunStatistics;

    #[test]
    fn hash_is_pinned() {
        let cfg = RunConfig::default();
        let h = inputs_hash("table-s1", &cfg, &BTreeMap::new());
        assert_eq!(h.len(), 64);
        assert_eq!(h, inputs_hash("table-s1", &cfg, &BTreeMap::new()));
        let mut extra = BTreeMap::new();
        extra.insert("seed".to_string(), "7".to_string());
        assert_ne!(h, inputs_hash("table-s1", &cfg, &extra));
    }

    #[test]
    fn record_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let report = SimReport {
            seed: 7,
            stats: RunStatistics {
                n_emitted: 10,
                n_sifted: 3,
                n_bit_errors: 1,
                n_double_clicks: 0,
            },
            per_delay_counts: [(1, 1), (2, 2), (3, 0), (4, 0)].into_iter().collect(),
            n_discarded: 0,
        };
        let rec = RunRecord::new(
            "simulate",
            &RunConfig {
                mu: Some(0.1 + 0.2),
                ..RunConfig::default()
            },
            BTreeMap::new(),
            RecordOutput::Simulation(report),
            Some(0.125),
        );
        let path = rec.write_to(dir.path()).unwrap();
        assert!(path.ends_with(format!("{}.json", rec.inputs_hash)));
        assert_eq!(RunRecord::read_from(&path).unwrap(), rec);
    }
}
