//! Parsing and filtering of PhysioNet-2019-style pipe-separated patient files.
//!
//! Each `.psv` file holds one patient: a header row of column names and one
//! data row per hour of ICU stay. Only the `HR`, `Age`, and `SepsisLabel`
//! columns are read; everything else is skipped by name. Missing values are
//! spelled `NaN` (case-sensitive).

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("required column `{0}` not found in header")]
    MissingColumn(String),
    #[error("malformed data row at line {0}")]
    MalformedRow(usize),
    #[error("sepsis label reverts to 0 after onset")]
    NonMonotoneSepsisLabel,
    #[error("record has no data rows")]
    EmptyRecord,
}

/// One hour of a patient's record.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyObservation {
    /// Hours since ICU admission; consecutive from 0 within a record.
    pub hour_index: usize,
    /// Beats per minute; `None` when the reading is missing.
    pub heart_rate: Option<f64>,
    /// 0 = non-sepsis, 1 = sepsis.
    pub sepsis_label: u8,
}

/// Where a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordSource {
    RealPsv,
    Synthetic,
}

/// A full per-patient heart-rate and label stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPatientRecord {
    pub patient_id: String,
    pub age: f64,
    pub observations: Vec<HourlyObservation>,
    pub source: RecordSource,
}

impl RawPatientRecord {
    /// Hour index of the first sepsis-labeled observation, if any.
    pub fn sepsis_onset(&self) -> Option<usize> {
        find_sepsis_onset(self)
    }

    pub fn stay_hours(&self) -> usize {
        self.observations.len()
    }
}

/// Inclusion thresholds for the study cohort. Both bounds are exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortCriteria {
    pub min_age_exclusive: f64,
    pub min_stay_hours_exclusive: usize,
}

impl Default for CohortCriteria {
    fn default() -> Self {
        Self {
            min_age_exclusive: 14.0,
            min_stay_hours_exclusive: 12,
        }
    }
}

/// Heart rates outside this closed range are treated as anomalous readings.
pub const HR_PLAUSIBLE_MIN: f64 = 15.0;
pub const HR_PLAUSIBLE_MAX: f64 = 300.0;

/// Parse one pipe-separated patient file.
///
/// The header must name at least `HR`, `Age`, and `SepsisLabel`. Age is read
/// from the first data row; later rows must agree. Labels must be monotone
/// non-decreasing (a patient never reverts to non-sepsis in this dataset, so
/// a violation signals file corruption).
pub fn parse_psv(patient_id: &str, text: &str) -> Result<RawPatientRecord, IngestError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(IngestError::EmptyRecord)?;
    let columns: Vec<&str> = header.split('|').map(str::trim).collect();

    let col_index = |name: &str| -> Result<usize, IngestError> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let hr_col = col_index("HR")?;
    let age_col = col_index("Age")?;
    let label_col = col_index("SepsisLabel")?;

    let mut observations = Vec::new();
    let mut age: Option<f64> = None;
    let mut seen_sepsis = false;

    for (idx, line) in lines {
        let line_no = idx + 1; // 1-based, matching editors
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(IngestError::MalformedRow(line_no));
        }

        let heart_rate = parse_optional(fields[hr_col], line_no)?;
        if let Some(hr) = heart_rate {
            if !hr.is_finite() {
                return Err(IngestError::MalformedRow(line_no));
            }
        }

        let row_age = parse_required(fields[age_col], line_no)?;
        match age {
            None => age = Some(row_age),
            Some(first) if first != row_age => return Err(IngestError::MalformedRow(line_no)),
            Some(_) => {}
        }

        let sepsis_label = match fields[label_col] {
            "0" => 0u8,
            "1" => 1u8,
            _ => return Err(IngestError::MalformedRow(line_no)),
        };
        if seen_sepsis && sepsis_label == 0 {
            return Err(IngestError::NonMonotoneSepsisLabel);
        }
        seen_sepsis |= sepsis_label == 1;

        observations.push(HourlyObservation {
            hour_index: observations.len(),
            heart_rate,
            sepsis_label,
        });
    }

    if observations.is_empty() {
        return Err(IngestError::EmptyRecord);
    }

    Ok(RawPatientRecord {
        patient_id: patient_id.to_string(),
        age: age.expect("non-empty record has an age"),
        observations,
        source: RecordSource::RealPsv,
    })
}

fn parse_optional(field: &str, line_no: usize) -> Result<Option<f64>, IngestError> {
    if field == "NaN" {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| IngestError::MalformedRow(line_no))
}

fn parse_required(field: &str, line_no: usize) -> Result<f64, IngestError> {
    let v = field
        .parse::<f64>()
        .map_err(|_| IngestError::MalformedRow(line_no))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(IngestError::MalformedRow(line_no))
    }
}

/// Replace heart rates below 15 or above 300 bpm with missing. The hour
/// itself is kept so downstream imputation handles anomalous and absent
/// readings the same way. Bounds are exclusive: 15 and 300 exactly survive.
pub fn plausibility_filter(mut record: RawPatientRecord) -> RawPatientRecord {
    for obs in &mut record.observations {
        if let Some(hr) = obs.heart_rate {
            if hr < HR_PLAUSIBLE_MIN || hr > HR_PLAUSIBLE_MAX {
                obs.heart_rate = None;
            }
        }
    }
    record
}

/// True iff the patient meets the cohort criteria: age strictly above the
/// bound and strictly more hourly rows than the stay bound.
pub fn cohort_filter(record: &RawPatientRecord, criteria: &CohortCriteria) -> bool {
    record.age > criteria.min_age_exclusive
        && record.observations.len() > criteria.min_stay_hours_exclusive
}

/// Hour index of the first observation labeled sepsis, or `None`.
pub fn find_sepsis_onset(record: &RawPatientRecord) -> Option<usize> {
    record
        .observations
        .iter()
        .position(|obs| obs.sepsis_label == 1)
}
