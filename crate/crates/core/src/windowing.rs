//! From filtered patient records to labeled 12-hour heart-rate windows.
//!
//! Non-sepsis patients contribute the last 12 hours of their stay; sepsis
//! patients contribute the 12 consecutive hours ending `horizon` hours before
//! onset. Windows with more than 4 missing hours are discarded, the rest are
//! forward-filled, and the training partition is rebalanced by noise-injection
//! augmentation of sepsis windows.

use crate::ingest::{HourlyObservation, RawPatientRecord, RecordSource};
use crate::stream::derive_rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WINDOW_HOURS: usize = 12;
/// Keep a window only if at most this many of its hours are missing.
pub const MAX_MISSING_HOURS: usize = 4;
/// Injected noise is truncated to this magnitude (beats per minute).
pub const NOISE_BOUND: f64 = 4.0;
/// Standard deviation of the injected Gaussian noise before truncation.
pub const NOISE_SIGMA: f64 = 2.0;
/// Augmentation perturbs between 1 and this many positions of a window.
pub const MAX_NOISED_POSITIONS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("window slice has no present values")]
    AllMissing,
    #[error("dataset has no sepsis windows to augment")]
    NoMinorityClass,
    #[error("split fraction allocates zero patients to the {0} partition")]
    EmptyPartition(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid split spec: {0}")]
    BadSplitSpec(String),
    #[error("invalid synthetic cohort params: {0}")]
    BadParams(String),
    #[error("invalid window: {0}")]
    BadWindow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowLabel {
    NonSepsis,
    Sepsis,
}

impl WindowLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            WindowLabel::NonSepsis => 0,
            WindowLabel::Sepsis => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(WindowLabel::NonSepsis),
            1 => Some(WindowLabel::Sepsis),
            _ => None,
        }
    }
}

/// A fully imputed 12-hour heart-rate sequence, the universal model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartRateWindow {
    /// Exactly 12 hourly values, beats per minute, no missing entries.
    pub values: Vec<f64>,
    pub label: WindowLabel,
    /// Lead time in hours between window end and sepsis onset (1 or 4).
    pub horizon_hours: u8,
    pub patient_id: String,
    /// True for noise-injected copies created by balancing.
    pub augmented: bool,
}

impl HeartRateWindow {
    /// Check the structural invariants: exactly 12 values, all finite, all
    /// within the plausibility bounds widened by the maximum injected noise.
    pub fn validate(&self) -> Result<(), WindowError> {
        if self.values.len() != WINDOW_HOURS {
            return Err(WindowError::BadWindow(format!(
                "expected {} values, got {}",
                WINDOW_HOURS,
                self.values.len()
            )));
        }
        let lo = crate::ingest::HR_PLAUSIBLE_MIN - NOISE_BOUND;
        let hi = crate::ingest::HR_PLAUSIBLE_MAX + NOISE_BOUND;
        for &v in &self.values {
            if !v.is_finite() || v < lo || v > hi {
                return Err(WindowError::BadWindow(format!("value {v} out of [{lo}, {hi}]")));
            }
        }
        if self.horizon_hours != 1 && self.horizon_hours != 4 {
            return Err(WindowError::BadWindow(format!(
                "horizon {} not in {{1, 4}}",
                self.horizon_hours
            )));
        }
        Ok(())
    }
}

/// A raw 12-hour slice before imputation: values may still be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindowSlice {
    pub values: Vec<Option<f64>>,
    pub label: WindowLabel,
    pub horizon_hours: u8,
    pub patient_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub windows: Vec<HeartRateWindow>,
    pub horizon_hours: u8,
}

impl LabeledDataset {
    pub fn new(horizon_hours: u8) -> Self {
        Self {
            windows: Vec::new(),
            horizon_hours,
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn sepsis_count(&self) -> usize {
        self.windows
            .iter()
            .filter(|w| w.label == WindowLabel::Sepsis)
            .count()
    }

    pub fn prevalence(&self) -> f64 {
        if self.windows.is_empty() {
            0.0
        } else {
            self.sepsis_count() as f64 / self.windows.len() as f64
        }
    }
}

/// Train/validation/test fractions plus the seed driving the shuffle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), WindowError> {
        let fracs = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(WindowError::BadSplitSpec(
                "fractions must lie strictly inside (0, 1)".into(),
            ));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WindowError::BadSplitSpec(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Desk-scale stand-in for the real dataset: seeded synthetic patients with a
/// configurable heart-rate ramp ahead of sepsis onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohortParams {
    pub n_patients: usize,
    /// Fraction of patients that develop sepsis, in [0, 1].
    pub sepsis_fraction: f64,
    pub baseline_hr_mean: f64,
    pub baseline_hr_sd: f64,
    /// Beats/min/hour added over the final 12 pre-onset hours of sepsis cases.
    pub drift_per_hour: f64,
    /// Probability that any hourly reading is masked missing, in [0, 1).
    pub missing_rate: f64,
    pub seed: u64,
}

impl SyntheticCohortParams {
    pub fn validate(&self) -> Result<(), WindowError> {
        if self.n_patients < 1 {
            return Err(WindowError::BadParams("n_patients must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sepsis_fraction) {
            return Err(WindowError::BadParams("sepsis_fraction must be in [0, 1]".into()));
        }
        if self.baseline_hr_sd <= 0.0 {
            return Err(WindowError::BadParams("baseline_hr_sd must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(WindowError::BadParams("missing_rate must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Extract the raw 12-hour slice for one patient at the given horizon.
///
/// Non-sepsis records yield their final 12 hours. Sepsis records yield the 12
/// consecutive hours ending exactly `horizon` hours before onset, which
/// requires at least `horizon + 12` pre-onset hours; infeasible cases return
/// `None`. The slice keeps missing values; gating and imputation come later.
pub fn extract_window(record: &RawPatientRecord, horizon: u8) -> Option<RawWindowSlice> {
    let horizon_usize = horizon as usize;
    let (start, label) = match record.sepsis_onset() {
        None => {
            if record.observations.len() < WINDOW_HOURS {
                return None;
            }
            (record.observations.len() - WINDOW_HOURS, WindowLabel::NonSepsis)
        }
        Some(onset) => {
            if onset < horizon_usize + WINDOW_HOURS {
                return None;
            }
            (onset - horizon_usize - (WINDOW_HOURS - 1), WindowLabel::Sepsis)
        }
    };
    let values = record.observations[start..start + WINDOW_HOURS]
        .iter()
        .map(|obs| obs.heart_rate)
        .collect();
    Some(RawWindowSlice {
        values,
        label,
        horizon_hours: horizon,
        patient_id: record.patient_id.clone(),
    })
}

/// True (keep) iff at most 4 of the 12 hours are missing.
pub fn missingness_gate(slice: &RawWindowSlice) -> bool {
    slice.values.iter().filter(|v| v.is_none()).count() <= MAX_MISSING_HOURS
}

/// Forward-fill missing values from the nearest preceding present value; a
/// missing prefix is backfilled from the first present value.
pub fn impute_forward_fill(slice: &RawWindowSlice) -> Result<HeartRateWindow, WindowError> {
    let first_present = slice
        .values
        .iter()
        .flatten()
        .next()
        .copied()
        .ok_or(WindowError::AllMissing)?;

    let mut values = Vec::with_capacity(slice.values.len());
    let mut last = first_present;
    for v in &slice.values {
        if let Some(x) = v {
            last = *x;
        }
        values.push(last);
    }

    Ok(HeartRateWindow {
        values,
        label: slice.label,
        horizon_hours: slice.horizon_hours,
        patient_id: slice.patient_id.clone(),
        augmented: false,
    })
}

/// Perturb 1..=8 uniformly chosen positions by zero-mean Gaussian noise
/// (sigma 2) truncated to +/-4 beats. Label, horizon, and patient are kept;
/// the copy is flagged augmented.
pub fn augment_noise(window: &HeartRateWindow, rng: &mut ChaCha8Rng) -> HeartRateWindow {
    debug_assert!(!window.augmented, "augmentation source must be an original window");
    let k = rng.gen_range(1..=MAX_NOISED_POSITIONS);
    let mut positions: Vec<usize> = (0..window.values.len()).collect();
    positions.shuffle(rng);
    positions.truncate(k);

    let normal = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut out = window.clone();
    for &pos in &positions {
        let delta = loop {
            let d: f64 = normal.sample(rng);
            if d.abs() <= NOISE_BOUND {
                break d;
            }
        };
        out.values[pos] += delta;
    }
    out.augmented = true;
    out
}

/// Append augmented copies of uniformly sampled original sepsis windows until
/// the sepsis fraction reaches `target_prevalence`. Stops at the first count
/// meeting the bar; never removes windows.
pub fn balance_dataset(
    ds: &LabeledDataset,
    target_prevalence: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledDataset, WindowError> {
    let originals: Vec<&HeartRateWindow> = ds
        .windows
        .iter()
        .filter(|w| w.label == WindowLabel::Sepsis && !w.augmented)
        .collect();
    let sepsis = ds.sepsis_count();
    if ds.prevalence() >= target_prevalence {
        return Ok(ds.clone());
    }
    if originals.is_empty() {
        return Err(WindowError::NoMinorityClass);
    }

    let mut out = ds.clone();
    let mut sepsis = sepsis;
    while (sepsis as f64) / (out.windows.len() as f64) < target_prevalence {
        let source = originals[rng.gen_range(0..originals.len())];
        out.windows.push(augment_noise(source, rng));
        sepsis += 1;
    }
    Ok(out)
}

/// Patient-level stratified split: all of a patient's windows land in one
/// partition, class counts are allocated per-partition by largest remainder,
/// and the shuffle is fully determined by the seed. Balancing happens after
/// the split, on the training partition only.
pub fn split(
    ds: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset), WindowError> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(WindowError::EmptyDataset);
    }

    // Group windows by patient in first-appearance order.
    let mut patient_order: Vec<&str> = Vec::new();
    let mut patient_windows: std::collections::HashMap<&str, Vec<usize>> =
        std::collections::HashMap::new();
    for (i, w) in ds.windows.iter().enumerate() {
        let entry = patient_windows.entry(w.patient_id.as_str()).or_default();
        if entry.is_empty() {
            patient_order.push(w.patient_id.as_str());
        }
        entry.push(i);
    }

    // A patient is a sepsis patient if any of their windows carries the label.
    let mut sepsis_patients = Vec::new();
    let mut non_sepsis_patients = Vec::new();
    for pid in &patient_order {
        let has_sepsis = patient_windows[pid]
            .iter()
            .any(|&i| ds.windows[i].label == WindowLabel::Sepsis);
        if has_sepsis {
            sepsis_patients.push(*pid);
        } else {
            non_sepsis_patients.push(*pid);
        }
    }

    let mut rng = derive_rng(spec.seed, "windowing/split", &[]);
    sepsis_patients.shuffle(&mut rng);
    non_sepsis_patients.shuffle(&mut rng);

    // Partition totals are fixed first so overall cardinality is exact; the
    // sepsis class is then allocated inside those totals and non-sepsis
    // patients fill the rest.
    let fractions = [spec.train_fraction, spec.val_fraction, spec.test_fraction];
    let n_patients = sepsis_patients.len() + non_sepsis_patients.len();
    let totals = largest_remainder_allocation(n_patients, &fractions, None);
    let sepsis_counts =
        largest_remainder_allocation(sepsis_patients.len(), &fractions, Some(&totals));
    let non_counts: Vec<usize> = totals
        .iter()
        .zip(&sepsis_counts)
        .map(|(t, s)| t - s)
        .collect();

    let mut assignment: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (class, counts) in [(&sepsis_patients, &sepsis_counts), (&non_sepsis_patients, &non_counts)]
    {
        let mut cursor = 0;
        for (part, &count) in counts.iter().enumerate() {
            for pid in &class[cursor..cursor + count] {
                assignment.insert(pid, part);
            }
            cursor += count;
        }
    }

    let mut partitions = [
        LabeledDataset::new(ds.horizon_hours),
        LabeledDataset::new(ds.horizon_hours),
        LabeledDataset::new(ds.horizon_hours),
    ];
    for w in &ds.windows {
        let part = assignment[w.patient_id.as_str()];
        partitions[part].windows.push(w.clone());
    }

    let names = ["train", "val", "test"];
    for (p, name) in partitions.iter().zip(names) {
        if p.is_empty() {
            return Err(WindowError::EmptyPartition(name));
        }
    }

    let [train, val, test] = partitions;
    Ok((train, val, test))
}

/// Integer allocation of `n` items to partitions proportional to `fractions`,
/// summing exactly to `n`. Remainders go to the largest fractional parts,
/// ties broken by partition order. With `capacity` set, no partition exceeds
/// its cap (requires total capacity >= n).
fn largest_remainder_allocation(
    n: usize,
    fractions: &[f64; 3],
    capacity: Option<&Vec<usize>>,
) -> Vec<usize> {
    let cap = |i: usize| capacity.map_or(usize::MAX, |c| c[i]);
    let mut counts = vec![0usize; 3];
    let mut remainders = [(0.0f64, 0usize); 3];
    let mut assigned = 0;
    for i in 0..3 {
        let exact = fractions[i] * n as f64;
        counts[i] = (exact.floor() as usize).min(cap(i));
        remainders[i] = (exact - exact.floor(), i);
        assigned += counts[i];
    }
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut left = n - assigned;
    while left > 0 {
        let before = left;
        for &(_, i) in &remainders {
            if left > 0 && counts[i] < cap(i) {
                counts[i] += 1;
                left -= 1;
            }
        }
        assert!(left < before, "total capacity below n");
    }
    counts
}

/// Generate a seeded synthetic cohort. Non-sepsis patients draw stationary
/// heart rates around the baseline; sepsis patients ramp upward by
/// `drift_per_hour` over the final 12 pre-onset hours and stay elevated after
/// onset. Readings are masked missing with probability `missing_rate`.
pub fn synthesize_cohort(params: &SyntheticCohortParams) -> Result<Vec<RawPatientRecord>, WindowError> {
    params.validate()?;
    let n_sepsis = (params.n_patients as f64 * params.sepsis_fraction).round() as usize;
    let normal = Normal::new(0.0, params.baseline_hr_sd).expect("validated sd");

    let mut records = Vec::with_capacity(params.n_patients);
    for idx in 0..params.n_patients {
        let mut rng = derive_rng(params.seed, "windowing/synth", &[idx as u64]);
        let is_sepsis = idx < n_sepsis;

        // Onsets leave room for both horizons; stays extend a little past onset.
        let (stay_hours, onset) = if is_sepsis {
            let onset = rng.gen_range(16..=36usize);
            (onset + rng.gen_range(1..=6usize), Some(onset))
        } else {
            (rng.gen_range(16..=48usize), None)
        };

        let observations = (0..stay_hours)
            .map(|hour| {
                let drift = match onset {
                    Some(t) if hour + 12 >= t => {
                        let k = (hour + 12 - t).min(11) as f64;
                        k * params.drift_per_hour
                    }
                    _ => 0.0,
                };
                let hr = (params.baseline_hr_mean + drift + normal.sample(&mut rng))
                    .clamp(crate::ingest::HR_PLAUSIBLE_MIN, crate::ingest::HR_PLAUSIBLE_MAX);
                let heart_rate = if rng.gen_bool(params.missing_rate) {
                    None
                } else {
                    Some(hr)
                };
                HourlyObservation {
                    hour_index: hour,
                    heart_rate,
                    sepsis_label: u8::from(onset.is_some_and(|t| hour >= t)),
                }
            })
            .collect();

        records.push(RawPatientRecord {
            patient_id: format!("synth{idx:06}"),
            age: 40.0 + (idx % 40) as f64,
            observations,
            source: RecordSource::Synthetic,
        });
    }
    Ok(records)
}

/// Write a dataset as CSV: one window per row, heart rates printed with
/// round-trip precision.
pub fn write_dataset_csv<W: std::io::Write>(
    ds: &LabeledDataset,
    out: W,
) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![
        "patient_id".to_string(),
        "horizon_hours".to_string(),
        "label".to_string(),
        "augmented".to_string(),
    ];
    header.extend((0..WINDOW_HOURS).map(|i| format!("hr_{i:02}")));
    writer.write_record(&header)?;
    for w in &ds.windows {
        let mut row = vec![
            w.patient_id.clone(),
            w.horizon_hours.to_string(),
            w.label.as_u8().to_string(),
            u8::from(w.augmented).to_string(),
        ];
        row.extend(w.values.iter().map(|v| v.to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum DatasetCsvError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {0}: {1}")]
    BadRow(usize, String),
    #[error("windows disagree on horizon ({0} vs {1})")]
    MixedHorizons(u8, u8),
    #[error("dataset file has no rows")]
    Empty,
}

/// Read a dataset written by [`write_dataset_csv`]. All rows must share one
/// horizon and every window must satisfy its structural invariants.
pub fn read_dataset_csv<R: std::io::Read>(input: R) -> Result<LabeledDataset, DatasetCsvError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required: Vec<String> = {
        let mut names = vec![
            "patient_id".to_string(),
            "horizon_hours".to_string(),
            "label".to_string(),
            "augmented".to_string(),
        ];
        names.extend((0..WINDOW_HOURS).map(|i| format!("hr_{i:02}")));
        names
    };
    let mut positions = Vec::with_capacity(required.len());
    for name in &required {
        positions
            .push(col(name).ok_or_else(|| DatasetCsvError::BadRow(1, format!("missing column {name}")))?);
    }

    let mut windows = Vec::new();
    let mut horizon: Option<u8> = None;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        let field = |j: usize| record.get(positions[j]).unwrap_or("");
        let parse_err = |what: &str| DatasetCsvError::BadRow(line, format!("bad {what}"));

        let h: u8 = field(1).parse().map_err(|_| parse_err("horizon_hours"))?;
        match horizon {
            None => horizon = Some(h),
            Some(h0) if h0 != h => return Err(DatasetCsvError::MixedHorizons(h0, h)),
            _ => {}
        }
        let label = field(2)
            .parse::<u8>()
            .ok()
            .and_then(WindowLabel::from_u8)
            .ok_or_else(|| parse_err("label"))?;
        let augmented = match field(3) {
            "0" => false,
            "1" => true,
            _ => return Err(parse_err("augmented")),
        };
        let mut values = Vec::with_capacity(WINDOW_HOURS);
        for j in 0..WINDOW_HOURS {
            values.push(field(4 + j).parse::<f64>().map_err(|_| parse_err("heart rate"))?);
        }
        let window = HeartRateWindow {
            values,
            label,
            horizon_hours: h,
            patient_id: field(0).to_string(),
            augmented,
        };
        window
            .validate()
            .map_err(|e| DatasetCsvError::BadRow(line, e.to_string()))?;
        windows.push(window);
    }
    let horizon = horizon.ok_or(DatasetCsvError::Empty)?;
    Ok(LabeledDataset {
        windows,
        horizon_hours: horizon,
    })
}
