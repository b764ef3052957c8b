//! Scoring and profiling: ROC/AUROC, precision-recall/AP, calibration,
//! sensitivity-anchored operating points, latency and size measurement, and
//! report emission.

use serde::Serialize;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("both classes are required")]
    SingleClass,
    #[error("at least one positive label is required")]
    NoPositives,
    #[error("invalid scored set: {0}")]
    BadInput(String),
}

/// Parallel prediction scores and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricError> {
        if scores.is_empty() || scores.len() != labels.len() {
            return Err(MetricError::BadInput(
                "scores and labels must be equal-length and non-empty".into(),
            ));
        }
        if scores.iter().any(|s| !s.is_finite() || !(0.0..=1.0).contains(s)) {
            return Err(MetricError::BadInput("scores must lie in [0, 1]".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(MetricError::BadInput("labels must be 0 or 1".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Indices sorted by descending score; equal scores keep input order.
    fn descending_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].partial_cmp(&self.scores[a]).unwrap());
        idx
    }
}

/// Classification rule everywhere: score ≥ threshold predicts positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    /// None when the bin is empty.
    pub mean_prediction: Option<f64>,
    pub observed_rate: Option<f64>,
    pub count: usize,
}

/// ROC curve over all distinct thresholds plus the (0,0) anchor, and the
/// trapezoid area, which equals the Mann-Whitney statistic with ties at ½.
pub fn roc_auc(s: &ScoredSet) -> Result<(Vec<RocPoint>, f64), MetricError> {
    let pos = s.positives();
    let neg = s.negatives();
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let order = s.descending_order();
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut at = 0;
    while at < order.len() {
        let t = s.scores[order[at]];
        // Whole tie block enters together.
        while at < order.len() && s.scores[order[at]] == t {
            if s.labels[order[at]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            at += 1;
        }
        points.push(RocPoint {
            threshold: t,
            false_positive_rate: fp as f64 / neg as f64,
            true_positive_rate: tp as f64 / pos as f64,
        });
    }
    let mut area = 0.0;
    for pair in points.windows(2) {
        area += (pair[1].false_positive_rate - pair[0].false_positive_rate)
            * (pair[1].true_positive_rate + pair[0].true_positive_rate)
            / 2.0;
    }
    Ok((points, area))
}

/// Precision-recall curve with tied scores processed as one block, and the
/// step-wise (non-interpolated) average precision Σ (Rₙ − Rₙ₋₁)·Pₙ.
pub fn pr_ap(s: &ScoredSet) -> Result<(Vec<PrPoint>, f64), MetricError> {
    let pos = s.positives();
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let order = s.descending_order();
    let mut points = vec![PrPoint {
        threshold: f64::INFINITY,
        recall: 0.0,
        precision: 1.0,
    }];
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut at = 0;
    while at < order.len() {
        let t = s.scores[order[at]];
        while at < order.len() && s.scores[order[at]] == t {
            if s.labels[order[at]] == 1 {
                tp += 1;
            }
            predicted += 1;
            at += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / predicted as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold: t,
            recall,
            precision,
        });
    }
    Ok((points, ap))
}

fn confusion(s: &ScoredSet, threshold: f64) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&score, &label) in s.scores.iter().zip(&s.labels) {
        match (score >= threshold, label) {
            (true, 1) => tp += 1,
            (true, 0) => fp += 1,
            (false, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    (tp, fp, tn, fn_)
}

/// All confusion-matrix metrics at a fixed threshold.
pub fn operating_point_at(s: &ScoredSet, threshold: f64) -> Result<OperatingPoint, MetricError> {
    let pos = s.positives();
    if pos == 0 || pos == s.len() {
        return Err(MetricError::SingleClass);
    }
    let (tp, _fp, tn, _fn) = confusion(s, threshold);
    Ok(OperatingPoint {
        threshold,
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / s.negatives() as f64,
        accuracy: (tp + tn) as f64 / s.len() as f64,
    })
}

/// The largest threshold whose sensitivity is at least `target`, with all
/// metrics evaluated there. The answer is always some positive's score.
pub fn threshold_at_sensitivity(
    s: &ScoredSet,
    target: f64,
) -> Result<OperatingPoint, MetricError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(MetricError::BadInput("target must lie in (0, 1]".into()));
    }
    let pos = s.positives();
    if pos == 0 || pos == s.len() {
        return Err(MetricError::SingleClass);
    }
    let mut pos_scores: Vec<f64> = s
        .scores
        .iter()
        .zip(&s.labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&sc, _)| sc)
        .collect();
    pos_scores.sort_by(|a, b| b.partial_cmp(a).unwrap());

    // Smallest k with k/pos ≥ target; the float repair loops guard the
    // boundary cases where target*pos rounds across an integer.
    let mut k = ((target * pos as f64).ceil() as usize).max(1);
    while k > 1 && (k - 1) as f64 / pos as f64 >= target {
        k -= 1;
    }
    while (k as f64 / pos as f64) < target {
        k += 1;
    }
    operating_point_at(s, pos_scores[k - 1])
}

/// Equal-width probability bins on [0,1]; the last bin is right-closed.
pub fn calibration_table(s: &ScoredSet, bins: usize) -> Vec<CalibrationBin> {
    assert!(bins >= 1, "need at least one bin");
    let mut sum_pred = vec![0.0; bins];
    let mut sum_label = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (&score, &label) in s.scores.iter().zip(&s.labels) {
        let b = ((score * bins as f64) as usize).min(bins - 1);
        sum_pred[b] += score;
        sum_label[b] += f64::from(label);
        count[b] += 1;
    }
    (0..bins)
        .map(|b| CalibrationBin {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            mean_prediction: (count[b] > 0).then(|| sum_pred[b] / count[b] as f64),
            observed_rate: (count[b] > 0).then(|| sum_label[b] / count[b] as f64),
            count: count[b],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    /// Median over timed passes of (pass time / window count).
    pub per_prediction_ms: f64,
    pub samples: usize,
    pub warmup_discarded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceProfile {
    pub size_bytes: u64,
    pub mean_latency_ms: f64,
    pub latency_samples: usize,
    pub warmup_discarded: usize,
}

impl ResourceProfile {
    pub fn from_parts(size_bytes: u64, latency: &LatencyReport) -> Self {
        Self {
            size_bytes,
            mean_latency_ms: latency.per_prediction_ms,
            latency_samples: latency.samples,
            warmup_discarded: latency.warmup_discarded,
        }
    }
}

/// Time `repeats` full passes (after `warmup` discarded ones) of a closure
/// that predicts every window once; median-of-passes suppresses scheduler
/// noise. The caller must keep the process otherwise idle during the call.
pub fn measure_latency<F: FnMut()>(
    mut pass: F,
    window_count: usize,
    repeats: usize,
    warmup: usize,
) -> LatencyReport {
    assert!(window_count >= 1, "need at least one window");
    assert!(repeats >= 1, "need at least one timed pass");
    for _ in 0..warmup {
        pass();
    }
    let mut per_pred: Vec<f64> = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        pass();
        per_pred.push(start.elapsed().as_secs_f64() * 1e3 / window_count as f64);
    }
    per_pred.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = repeats / 2;
    let median = if repeats % 2 == 1 {
        per_pred[mid]
    } else {
        (per_pred[mid - 1] + per_pred[mid]) / 2.0
    };
    LatencyReport {
        per_prediction_ms: median,
        samples: repeats,
        warmup_discarded: warmup,
    }
}

/// Exact byte length of a serialized model.
pub fn measure_size(model_file_bytes: &[u8]) -> u64 {
    model_file_bytes.len() as u64
}

/// Everything one evaluation run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub auroc: f64,
    pub aupr: f64,
    pub operating: OperatingPoint,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
    pub calibration: Vec<CalibrationBin>,
    pub size_bytes: u64,
    pub execution_time_ms: f64,
}

/// Key order here is the emitted JSON key order.
#[derive(Serialize)]
struct MetricsJson {
    auroc: f64,
    aupr: f64,
    sensitivity: f64,
    specificity: f64,
    accuracy: f64,
    size_kb: f64,
    execution_time_ms: f64,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Maps curve points into one SVG panel and returns its markup.
struct Panel {
    x0: f64,
    y0: f64,
    side: f64,
}

impl Panel {
    fn x(&self, v: f64) -> f64 {
        self.x0 + v.clamp(0.0, 1.0) * self.side
    }

    fn y(&self, v: f64) -> f64 {
        // SVG y grows downward.
        self.y0 + self.side - v.clamp(0.0, 1.0) * self.side
    }

    fn polyline(&self, pts: &[(f64, f64)], color: &str) -> String {
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", self.x(*x), self.y(*y)))
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        )
    }

    fn frame(&self, title: &str) -> String {
        format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" font-family=\"monospace\" fill=\"#222\">{title}</text>\n",
            self.x0,
            self.y0,
            self.side,
            self.side,
            self.x0,
            self.y0 - 6.0,
        )
    }

    fn diagonal(&self) -> String {
        format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n",
            self.x(0.0),
            self.y(0.0),
            self.x(1.0),
            self.y(1.0),
        )
    }
}

fn render_svg(bundle: &ReportBundle) -> String {
    let mut svg = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" height=\"280\" viewBox=\"0 0 760 280\">\n<rect width=\"760\" height=\"280\" fill=\"white\"/>\n",
    );
    let panels = [
        (Panel { x0: 30.0, y0: 40.0, side: 200.0 }, "ROC"),
        (Panel { x0: 280.0, y0: 40.0, side: 200.0 }, "Precision-Recall"),
        (Panel { x0: 530.0, y0: 40.0, side: 200.0 }, "Calibration"),
    ];
    for (panel, title) in &panels {
        svg.push_str(&panel.frame(title));
    }
    let (roc_panel, pr_panel, cal_panel) = (&panels[0].0, &panels[1].0, &panels[2].0);
    svg.push_str(&roc_panel.diagonal());
    svg.push_str(&cal_panel.diagonal());

    let roc_pts: Vec<(f64, f64)> = bundle
        .roc
        .iter()
        .map(|p| (p.false_positive_rate, p.true_positive_rate))
        .collect();
    svg.push_str(&roc_panel.polyline(&roc_pts, "#d62728"));

    let pr_pts: Vec<(f64, f64)> = bundle.pr.iter().map(|p| (p.recall, p.precision)).collect();
    svg.push_str(&pr_panel.polyline(&pr_pts, "#1f77b4"));

    let cal_pts: Vec<(f64, f64)> = bundle
        .calibration
        .iter()
        .filter_map(|b| Some((b.mean_prediction?, b.observed_rate?)))
        .collect();
    if !cal_pts.is_empty() {
        svg.push_str(&cal_panel.polyline(&cal_pts, "#2ca02c"));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes metrics.json, roc.csv, pr.csv, calibration.csv, and curves.svg into
/// `out_dir`; returns the written paths. Byte-identical across reruns on
/// identical inputs.
pub fn emit_report(bundle: &ReportBundle, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;

    let metrics = MetricsJson {
        auroc: bundle.auroc,
        aupr: bundle.aupr,
        sensitivity: bundle.operating.sensitivity,
        specificity: bundle.operating.specificity,
        accuracy: bundle.operating.accuracy,
        size_kb: bundle.size_bytes as f64 / 1024.0,
        execution_time_ms: bundle.execution_time_ms,
    };
    let mut json = serde_json::to_string_pretty(&metrics).expect("static schema");
    json.push('\n');

    let mut roc_csv = String::from("threshold,x,y\n");
    for p in &bundle.roc {
        roc_csv.push_str(&format!(
            "{},{},{}\n",
            p.threshold, p.false_positive_rate, p.true_positive_rate
        ));
    }
    let mut pr_csv = String::from("threshold,x,y\n");
    for p in &bundle.pr {
        pr_csv.push_str(&format!("{},{},{}\n", p.threshold, p.recall, p.precision));
    }
    let mut cal_csv = String::from("bin_lo,bin_hi,mean_pred,obs_freq,count\n");
    for b in &bundle.calibration {
        cal_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            b.lo,
            b.hi,
            fmt_opt(b.mean_prediction),
            fmt_opt(b.observed_rate),
            b.count
        ));
    }
    let svg = render_svg(bundle);

    let files = [
        ("metrics.json", json.into_bytes()),
        ("roc.csv", roc_csv.into_bytes()),
        ("pr.csv", pr_csv.into_bytes()),
        ("calibration.csv", cal_csv.into_bytes()),
        ("curves.svg", svg.into_bytes()),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = out_dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
