//! PSV file output and directory ingestion.
//!
//! One file per patient: a pipe-separated header naming HR, Age, and
//! SepsisLabel, one row per hour, `NaN` for a missing reading. Heart rates
//! print with round-trip precision, so a synthesized cohort survives a trip
//! through the parser bit for bit.

use std::path::{Path, PathBuf};

use pulsegate_core::ingest::{parse_psv, RawPatientRecord};

use crate::error::{io_at, CliError};

/// Render one patient record in the on-disk PSV layout.
pub fn render_psv(record: &RawPatientRecord) -> String {
    let mut text = String::from("HR|Age|SepsisLabel\n");
    for obs in &record.observations {
        let hr = match obs.heart_rate {
            Some(v) => v.to_string(),
            None => "NaN".to_string(),
        };
        text.push_str(&format!("{hr}|{}|{}\n", record.age, obs.sepsis_label));
    }
    text
}

/// Parse every `*.psv` file under `dir` in file-name order; the file stem is
/// the patient id. An empty directory is a data error, not an empty cohort.
pub fn read_psv_dir(dir: &Path) -> Result<Vec<RawPatientRecord>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_at(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "psv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no .psv files found",
            dir.display()
        )));
    }
    let mut records = Vec::with_capacity(paths.len());
    for path in &paths {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Data(format!("{}: unusable file name", path.display())))?;
        let text = std::fs::read_to_string(path).map_err(|e| io_at(path, e))?;
        let record = parse_psv(stem, &text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        records.push(record);
    }
    Ok(records)
}
