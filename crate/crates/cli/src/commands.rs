//! The seven subcommands, sharing one preprocessing pipeline and one
//! scoring path.
//!
//! Every command resolves its config, does all computation first, then
//! writes artifacts atomically and finishes with `manifest.json`, so a
//! failed run leaves either nothing or a complete artifact set behind.

use std::path::Path;

use pulsegate_core::eval::{
    calibration_table, emit_report, measure_latency, measure_size, pr_ap, roc_auc,
    threshold_at_sensitivity, ReportBundle, ResourceProfile, ScoredSet,
};
use pulsegate_core::gaopt::{run_ga, DatasetEvaluator, HistoryRecord, SurrogateEvaluator};
use pulsegate_core::ingest::{cohort_filter, plausibility_filter, CohortCriteria};
use pulsegate_core::models::{
    build, default_fine_tune_epochs, deserialize, fine_tune, predict_many, serialize, train,
    train_gbdt, ModelFamily, TrainedModel,
};
use pulsegate_core::stream::{derive_rng, derive_seed};
use pulsegate_core::windowing::{
    balance_dataset, extract_window, impute_forward_fill, missingness_gate, read_dataset_csv,
    split, synthesize_cohort, write_dataset_csv, LabeledDataset,
};

use crate::config::{reference_widths, DataSource, RunConfig};
use crate::error::{io_at, CliError};
use crate::manifest::{ManifestBuilder, StageCounts};
use crate::psv;

/// Operating points are picked at this sensitivity everywhere.
const SENSITIVITY_TARGET: f64 = 0.85;

/// Calibration bins in emitted reports.
const CALIBRATION_BINS: usize = 10;

pub fn cmd_synth(config: &RunConfig) -> Result<(), CliError> {
    let mut builder = ManifestBuilder::new("synth", config);
    let records = synthesize_cohort(&config.synth_params())?;
    for record in &records {
        let name = format!("psv/{}.psv", record.patient_id);
        builder.write_artifact(&name, psv::render_psv(record).as_bytes())?;
    }
    builder.set_counts(StageCounts {
        patients_parsed: Some(records.len() as u64),
        ..StageCounts::default()
    });
    builder.finish()?;
    println!(
        "synth: {} patients -> {}",
        records.len(),
        config.out_dir.join("psv").display()
    );
    Ok(())
}

/// Cohort records plus the split-and-balanced datasets and stage counts.
struct PipelineOutput {
    train_set: LabeledDataset,
    val_set: LabeledDataset,
    test_set: LabeledDataset,
    counts: StageCounts,
}

fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput, CliError> {
    let records = match &config.source {
        DataSource::Synthetic => synthesize_cohort(&config.synth_params())?,
        DataSource::Psv(dir) => psv::read_psv_dir(dir)?,
    };
    let patients_parsed = records.len() as u64;

    let criteria = CohortCriteria::default();
    let mut cohort_kept = 0u64;
    let mut windows_extracted = 0u64;
    let mut gated = 0u64;
    let mut dataset = LabeledDataset::new(config.horizon);
    for record in records {
        let record = plausibility_filter(record);
        if !cohort_filter(&record, &criteria) {
            continue;
        }
        cohort_kept += 1;
        let Some(slice) = extract_window(&record, config.horizon) else {
            continue;
        };
        windows_extracted += 1;
        if !missingness_gate(&slice) {
            continue;
        }
        gated += 1;
        dataset.windows.push(impute_forward_fill(&slice)?);
    }
    let imputed = dataset.len() as u64;

    let (train_set, val_set, test_set) = split(&dataset, &config.split_spec())?;
    let mut rng = derive_rng(config.seed, "cli/balance", &[u64::from(config.horizon)]);
    let train_set = balance_dataset(&train_set, config.target_prevalence, &mut rng)?;
    let balanced = (train_set.len() + val_set.len() + test_set.len()) as u64;

    Ok(PipelineOutput {
        train_set,
        val_set,
        test_set,
        counts: StageCounts {
            patients_parsed: Some(patients_parsed),
            cohort_kept: Some(cohort_kept),
            windows_extracted: Some(windows_extracted),
            gated: Some(gated),
            imputed: Some(imputed),
            balanced: Some(balanced),
        },
    })
}

fn dataset_csv_bytes(ds: &LabeledDataset) -> Result<Vec<u8>, CliError> {
    let mut bytes = Vec::new();
    write_dataset_csv(ds, &mut bytes)?;
    Ok(bytes)
}

pub fn cmd_preprocess(config: &RunConfig) -> Result<(), CliError> {
    let mut builder = ManifestBuilder::new("preprocess", config);
    let out = run_pipeline(config)?;
    for (part, ds) in [
        ("train", &out.train_set),
        ("val", &out.val_set),
        ("test", &out.test_set),
    ] {
        let name = format!("{part}_h{}.csv", config.horizon);
        builder.write_artifact(&name, &dataset_csv_bytes(ds)?)?;
    }
    builder.set_counts(out.counts.clone());
    builder.finish()?;
    println!(
        "preprocess: {} patients -> {} kept -> {} windows -> {} gated; train {} ({:.1}% sepsis) / val {} / test {} -> {}",
        out.counts.patients_parsed.unwrap_or(0),
        out.counts.cohort_kept.unwrap_or(0),
        out.counts.windows_extracted.unwrap_or(0),
        out.counts.gated.unwrap_or(0),
        out.train_set.len(),
        out.train_set.prevalence() * 100.0,
        out.val_set.len(),
        out.test_set.len(),
        config.out_dir.display(),
    );
    Ok(())
}

fn read_dataset_at(path: &Path) -> Result<LabeledDataset, CliError> {
    let file = std::fs::File::open(path).map_err(|e| io_at(path, e))?;
    read_dataset_csv(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Read one preprocessed split for the configured horizon.
fn read_split(config: &RunConfig, part: &str) -> Result<LabeledDataset, CliError> {
    let path = config.split_path(part);
    let ds = read_dataset_at(&path)?;
    if ds.horizon_hours != config.horizon {
        return Err(CliError::Horizon(format!(
            "{}: dataset is {}h but the run is configured for {}h",
            path.display(),
            ds.horizon_hours,
            config.horizon
        )));
    }
    Ok(ds)
}

fn read_model(path: &Path) -> Result<(TrainedModel, Vec<u8>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_at(path, e))?;
    let model = deserialize(&bytes)?;
    Ok((model, bytes))
}

fn train_log_csv(model: &TrainedModel) -> String {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for (i, loss) in model.train_log.iter().enumerate() {
        let val = model
            .val_log
            .get(i)
            .map(ToString::to_string)
            .unwrap_or_default();
        text.push_str(&format!("{},{loss},{val}\n", i + 1));
    }
    text
}

/// Score a model on a dataset: curve metrics, the sensitivity-targeted
/// operating point, and a resource profile from the serialized bytes.
fn score_bundle(
    model: &TrainedModel,
    ds: &LabeledDataset,
    model_bytes: &[u8],
    repeats: usize,
    warmup: usize,
) -> Result<(ReportBundle, ResourceProfile), CliError> {
    if ds.horizon_hours != model.horizon_hours {
        return Err(CliError::Horizon(format!(
            "horizon mismatch: model predicts {}h, dataset is windowed for {}h",
            model.horizon_hours, ds.horizon_hours
        )));
    }
    if repeats == 0 {
        return Err(CliError::Config("latency repeats must be >= 1".into()));
    }
    let scores = predict_many(model, &ds.windows);
    let labels: Vec<u8> = ds.windows.iter().map(|w| w.label.as_u8()).collect();
    let scored = ScoredSet::new(scores, labels).map_err(|e| CliError::Data(e.to_string()))?;
    let (roc, auroc) = roc_auc(&scored).map_err(|e| CliError::Data(e.to_string()))?;
    let (pr, aupr) = pr_ap(&scored).map_err(|e| CliError::Data(e.to_string()))?;
    let operating = threshold_at_sensitivity(&scored, SENSITIVITY_TARGET)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let calibration = calibration_table(&scored, CALIBRATION_BINS);

    let size_bytes = measure_size(model_bytes);
    let latency = measure_latency(
        || {
            std::hint::black_box(predict_many(model, &ds.windows));
        },
        ds.len(),
        repeats,
        warmup,
    );
    let profile = ResourceProfile::from_parts(size_bytes, &latency);
    let bundle = ReportBundle {
        auroc,
        aupr,
        operating,
        roc,
        pr,
        calibration,
        size_bytes,
        execution_time_ms: latency.per_prediction_ms,
    };
    Ok((bundle, profile))
}

/// Emit the five report files and record them in the manifest.
fn write_report(builder: &mut ManifestBuilder, config: &RunConfig, bundle: &ReportBundle) -> Result<(), CliError> {
    let paths = emit_report(bundle, &config.out_dir).map_err(|e| io_at(&config.out_dir, e))?;
    for path in &paths {
        let name = path
            .file_name()
            .expect("report files have names")
            .to_string_lossy()
            .into_owned();
        builder.record_artifact(&name, path)?;
    }
    Ok(())
}

fn profile_json(profile: &ResourceProfile) -> Result<Vec<u8>, CliError> {
    let mut json = serde_json::to_string_pretty(profile)
        .map_err(|e| CliError::Data(format!("profile serialization: {e}")))?;
    json.push('\n');
    Ok(json.into_bytes())
}

pub fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    let mut builder = ManifestBuilder::new("train", config);
    let train_set = read_split(config, "train")?;
    let val_set = read_split(config, "val")?;
    let test_set = read_split(config, "test")?;

    let spec = config.model_spec()?;
    // read_split pinned every dataset to the configured horizon, so the
    // fitted gbdt inherits it from the training set.
    let fitted = match config.family {
        ModelFamily::Gbdt => train_gbdt(&spec, &train_set)?,
        _ => {
            let shell = build(&spec, config.horizon, config.weights_seed())?;
            train(&shell, &train_set, Some(&val_set), &config.train_config())?
        }
    };

    let model_bytes = serialize(&fitted);
    let model_name = RunConfig::model_file_name(config.family, config.horizon);
    builder.write_artifact(&model_name, &model_bytes)?;
    builder.write_artifact("train_log.csv", train_log_csv(&fitted).as_bytes())?;

    let (bundle, profile) = score_bundle(
        &fitted,
        &test_set,
        &model_bytes,
        config.latency_repeats,
        config.latency_warmup,
    )?;
    write_report(&mut builder, config, &bundle)?;
    builder.write_artifact("profile.json", &profile_json(&profile)?)?;
    builder.finish()?;
    println!(
        "train: {} h{} test auroc {:.4} -> {}",
        config.family.as_str(),
        config.horizon,
        bundle.auroc,
        config.out_dir.join(model_name).display(),
    );
    Ok(())
}

pub fn cmd_optimize(config: &RunConfig, surrogate: bool) -> Result<(), CliError> {
    let mut builder = ManifestBuilder::new("optimize", config);
    let ga = config.ga_config();

    let outcome = if surrogate {
        let targets = config
            .surrogate_targets
            .clone()
            .unwrap_or_else(|| reference_widths(config.family));
        run_ga(config.family, &SurrogateEvaluator::new(targets), &ga)?
    } else {
        let train_set = read_split(config, "train")?;
        let val_set = read_split(config, "val")?;
        let evaluator = DatasetEvaluator::new(&train_set, &val_set, ga.candidate_epochs)?;
        run_ga(config.family, &evaluator, &ga)?
    };

    let mut jsonl = String::new();
    for (generation, records) in outcome.history.iter().enumerate() {
        for record in records {
            let line = serde_json::to_string(&HistoryRecord::from_record(generation, record))
                .map_err(|e| CliError::Data(format!("history serialization: {e}")))?;
            jsonl.push_str(&line);
            jsonl.push('\n');
        }
    }
    builder.write_artifact("ga_history.jsonl", jsonl.as_bytes())?;

    let mut spec_json = serde_json::to_string_pretty(&outcome.best.spec)
        .map_err(|e| CliError::Data(format!("spec serialization: {e}")))?;
    spec_json.push('\n');
    builder.write_artifact("best_spec.json", spec_json.as_bytes())?;
    builder.finish()?;
    println!(
        "optimize: best {} widths {:?} rank_avg {:.3} -> {}",
        outcome.best.spec.family.as_str(),
        outcome.best.spec.layer_widths,
        outcome.best.rank_avg,
        config.out_dir.join("best_spec.json").display(),
    );
    Ok(())
}

pub fn cmd_transfer(
    config: &RunConfig,
    model_path: &Path,
    dataset_path: &Path,
    eval_dataset_path: Option<&Path>,
    epochs_flag: Option<usize>,
) -> Result<(), CliError> {
    let mut builder = ManifestBuilder::new("transfer", config);
    let (source, _) = read_model(model_path)?;
    let tune_set = read_dataset_at(dataset_path)?;
    let epochs = epochs_flag
        .or(config.fine_tune_epochs)
        .unwrap_or_else(|| default_fine_tune_epochs(source.spec.family));

    let shuffle_seed = derive_seed(config.seed, "cli/transfer", &[]);
    let tuned = fine_tune(&source, &tune_set, epochs, shuffle_seed)?;

    let model_bytes = serialize(&tuned);
    let model_name = RunConfig::model_file_name(tuned.spec.family, tuned.horizon_hours);
    builder.write_artifact(&model_name, &model_bytes)?;
    builder.write_artifact("train_log.csv", train_log_csv(&tuned).as_bytes())?;

    let eval_set = match eval_dataset_path {
        Some(path) => read_dataset_at(path)?,
        None => tune_set,
    };
    let (bundle, profile) = score_bundle(
        &tuned,
        &eval_set,
        &model_bytes,
        config.latency_repeats,
        config.latency_warmup,
    )?;
    write_report(&mut builder, config, &bundle)?;
    builder.write_artifact("profile.json", &profile_json(&profile)?)?;
    builder.finish()?;
    println!(
        "transfer: {} 1h -> 4h over {epochs} epochs, auroc {:.4} -> {}",
        tuned.spec.family.as_str(),
        bundle.auroc,
        config.out_dir.join(model_name).display(),
    );
    Ok(())
}

pub fn cmd_evaluate(
    config: &RunConfig,
    model_path: &Path,
    dataset_path: &Path,
) -> Result<(), CliError> {
    let mut builder = ManifestBuilder::new("evaluate", config);
    let (model, model_bytes) = read_model(model_path)?;
    let ds = read_dataset_at(dataset_path)?;
    let (bundle, profile) = score_bundle(
        &model,
        &ds,
        &model_bytes,
        config.latency_repeats,
        config.latency_warmup,
    )?;
    write_report(&mut builder, config, &bundle)?;
    builder.write_artifact("profile.json", &profile_json(&profile)?)?;
    builder.finish()?;
    println!(
        "evaluate: auroc {:.4} aupr {:.4} sensitivity {:.4} specificity {:.4} accuracy {:.4}",
        bundle.auroc,
        bundle.aupr,
        bundle.operating.sensitivity,
        bundle.operating.specificity,
        bundle.operating.accuracy,
    );
    Ok(())
}

pub fn cmd_profile(
    config: &RunConfig,
    model_path: &Path,
    dataset_path: &Path,
    repeats_flag: Option<usize>,
    warmup_flag: Option<usize>,
) -> Result<(), CliError> {
    let mut builder = ManifestBuilder::new("profile", config);
    let (model, model_bytes) = read_model(model_path)?;
    let ds = read_dataset_at(dataset_path)?;
    if ds.horizon_hours != model.horizon_hours {
        return Err(CliError::Horizon(format!(
            "horizon mismatch: model predicts {}h, dataset is windowed for {}h",
            model.horizon_hours, ds.horizon_hours
        )));
    }
    let repeats = repeats_flag.unwrap_or(config.latency_repeats);
    let warmup = warmup_flag.unwrap_or(config.latency_warmup);
    if repeats == 0 {
        return Err(CliError::Config("latency repeats must be >= 1".into()));
    }

    let latency = measure_latency(
        || {
            std::hint::black_box(predict_many(&model, &ds.windows));
        },
        ds.len(),
        repeats,
        warmup,
    );
    let profile = ResourceProfile::from_parts(measure_size(&model_bytes), &latency);
    builder.write_artifact("profile.json", &profile_json(&profile)?)?;
    builder.finish()?;
    println!(
        "profile: {} bytes, {:.6} ms/prediction over {} samples",
        profile.size_bytes, profile.mean_latency_ms, profile.latency_samples,
    );
    Ok(())
}
