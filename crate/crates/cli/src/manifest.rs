//! Run manifests: what ran, on what settings, producing which bytes.
//!
//! Every command finishes by writing `manifest.json` next to its artifacts:
//! tool version, resolved config snapshot, per-stage record counts, and a
//! sha256 per artifact. Reruns with the same config and seed reproduce every
//! hash; `timing_ms` is wall clock and the one field exempt from that.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_at, CliError};

/// Pipeline stage counts; filtering stages are non-increasing, balancing may
/// grow the count again. Commands without a pipeline leave all fields unset.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StageCounts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patients_parsed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cohort_kept: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows_extracted: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gated: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imputed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balanced: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub horizon: u8,
    pub config: BTreeMap<String, String>,
    pub stage_counts: StageCounts,
    /// Artifact path (relative to the output directory) -> sha256 hex.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock run time; not reproducible across runs by nature.
    pub timing_ms: u64,
}

/// Write bytes to a sibling temp file, then rename into place, so a crash
/// never leaves a partial artifact under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Accumulates artifacts for one command and writes the manifest last, so
/// the manifest only ever describes files that made it to disk.
pub struct ManifestBuilder {
    command: &'static str,
    config: RunConfig,
    started: Instant,
    counts: StageCounts,
    artifacts: BTreeMap<String, String>,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, config: &RunConfig) -> Self {
        Self {
            command,
            config: config.clone(),
            started: Instant::now(),
            counts: StageCounts::default(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn set_counts(&mut self, counts: StageCounts) {
        self.counts = counts;
    }

    /// Atomically write one artifact under the output directory and record
    /// its hash. `name` may contain subdirectories.
    pub fn write_artifact(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.config.out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_at(parent, e))?;
        }
        write_atomic(&path, bytes).map_err(|e| io_at(&path, e))?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Record a file some other writer produced under the output directory.
    pub fn record_artifact(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path).map_err(|e| io_at(path, e))?;
        self.artifacts.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    /// Write `manifest_<command>.json` (per-command names, so a pipeline
    /// sharing one directory keeps every stage's provenance) and return its
    /// path.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            seed: self.config.seed,
            horizon: self.config.horizon,
            config: self.config.snapshot(),
            stage_counts: self.counts,
            artifacts: self.artifacts,
            timing_ms: self.started.elapsed().as_millis() as u64,
        };
        let mut json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Data(format!("manifest serialization: {e}")))?;
        json.push('\n');
        let path = self
            .config
            .out_dir
            .join(format!("manifest_{}.json", self.command));
        std::fs::create_dir_all(&self.config.out_dir)
            .map_err(|e| io_at(&self.config.out_dir, e))?;
        write_atomic(&path, json.as_bytes()).map_err(|e| io_at(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    #[test]
    fn sha256_matches_the_published_test_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_writes_leave_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("artifact.txt");
        write_atomic(&path, b"payload").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"payload");
        let names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["artifact.txt".to_string()]);
    }

    #[test]
    fn manifest_records_artifacts_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::resolve(&Overrides::default()).unwrap();
        config.out_dir = dir.path().to_path_buf();

        let mut builder = ManifestBuilder::new("preprocess", &config);
        builder.write_artifact("train_h1.csv", b"header\n").unwrap();
        builder.set_counts(StageCounts {
            patients_parsed: Some(10),
            cohort_kept: Some(8),
            ..StageCounts::default()
        });
        let path = builder.finish().unwrap();

        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(manifest["command"], "preprocess");
        assert_eq!(manifest["stage_counts"]["patients_parsed"], 10);
        assert_eq!(manifest["stage_counts"]["cohort_kept"], 8);
        assert!(manifest["stage_counts"].get("gated").is_none());
        assert_eq!(
            manifest["artifacts"]["train_h1.csv"],
            sha256_hex(b"header\n")
        );
        assert_eq!(manifest["config"]["seed"], "7");
    }
}
