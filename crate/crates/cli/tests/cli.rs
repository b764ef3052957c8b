//! End-to-end tests that drive the compiled binary the way a user would:
//! real processes, real files, documented exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pulsegate_core::models::{deserialize, ModelFamily, ModelSpec};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pulsegate")
}

/// Scratch directory holding configs, inputs, and output dirs for one test.
struct Scratch {
    dir: tempfile::TempDir,
}

impl Scratch {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().expect("create tempdir"),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_config(&self, name: &str, text: &str) -> PathBuf {
        let path = self.path(name);
        std::fs::write(&path, text).expect("write config");
        path
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(bin())
            .args(args)
            .env("PULSEGATE_THREADS", "2")
            .output()
            .expect("spawn pulsegate")
    }
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exited with a code")
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parse {}: {e}", path.display()))
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
        .lines()
        .count()
        .saturating_sub(1)
}

/// Small cohort + tiny model settings shared by the pipeline tests.
fn small_config(extra: &str) -> String {
    format!("patients = 80\nfamily = mlp\nwidths = 8,6,4\nepochs = 4\n{extra}")
}

#[test]
fn synth_writes_one_psv_per_patient_deterministically() {
    let s = Scratch::new();
    let cfg = s.write_config("cfg.txt", "patients = 12\n");
    for out_dir in ["a", "b"] {
        let out = s.run(&[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            s.path(out_dir).to_str().unwrap(),
            "--seed",
            "7",
        ]);
        assert_ok(&out);
    }
    let files: Vec<_> = std::fs::read_dir(s.path("a/psv")).unwrap().collect();
    assert_eq!(files.len(), 12);

    let first = s.path("a/psv/synth000000.psv");
    let text = std::fs::read_to_string(&first).unwrap();
    assert!(text.starts_with("HR|Age|SepsisLabel\n"));
    assert_eq!(
        std::fs::read(&first).unwrap(),
        std::fs::read(s.path("b/psv/synth000000.psv")).unwrap(),
        "same seed must reproduce the same cohort bytes"
    );

    let manifest = read_json(&s.path("a/manifest_synth.json"));
    assert_eq!(manifest["stage_counts"]["patients_parsed"], 12);
    assert_eq!(manifest["command"], "synth");
}

#[test]
fn preprocess_counts_are_monotone_and_match_the_csvs() {
    let s = Scratch::new();
    // A high missing rate makes the missingness gate actually drop windows.
    let cfg = s.write_config("cfg.txt", "patients = 120\nmissing_rate = 0.3\n");
    let out_dir = s.path("out");
    let out = s.run(&[
        "preprocess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert_ok(&out);

    let manifest = read_json(&out_dir.join("manifest_preprocess.json"));
    let count = |key: &str| manifest["stage_counts"][key].as_u64().unwrap();
    assert_eq!(count("patients_parsed"), 120);
    assert!(count("cohort_kept") <= count("patients_parsed"));
    assert!(count("windows_extracted") <= count("cohort_kept"));
    assert!(count("gated") <= count("windows_extracted"));
    assert!(
        count("gated") < count("windows_extracted"),
        "missing_rate 0.3 should gate out at least one window"
    );
    assert_eq!(count("imputed"), count("gated"));

    let total: usize = ["train_h1.csv", "val_h1.csv", "test_h1.csv"]
        .iter()
        .map(|name| data_rows(&out_dir.join(name)))
        .sum();
    assert_eq!(count("balanced"), total as u64);

    for name in ["train_h1.csv", "val_h1.csv", "test_h1.csv"] {
        let hash = manifest["artifacts"][name].as_str().unwrap();
        assert_eq!(hash.len(), 64, "sha256 hex for {name}");
    }
}

#[test]
fn preprocess_from_psv_matches_the_synthetic_source() {
    let s = Scratch::new();
    let cfg = s.write_config("cfg.txt", "patients = 30\n");
    let syn_dir = s.path("syn");
    assert_ok(&s.run(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        syn_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]));

    let psv_cfg = s.write_config(
        "psv_cfg.txt",
        &format!(
            "source = psv\npsv_dir = {}\npatients = 30\n",
            syn_dir.join("psv").display()
        ),
    );
    let from_psv = s.path("from_psv");
    assert_ok(&s.run(&[
        "preprocess",
        "--config",
        psv_cfg.to_str().unwrap(),
        "--out",
        from_psv.to_str().unwrap(),
        "--seed",
        "7",
    ]));

    let from_syn = s.path("from_syn");
    assert_ok(&s.run(&[
        "preprocess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        from_syn.to_str().unwrap(),
        "--seed",
        "7",
    ]));

    for name in ["train_h1.csv", "val_h1.csv", "test_h1.csv"] {
        assert_eq!(
            std::fs::read(from_psv.join(name)).unwrap(),
            std::fs::read(from_syn.join(name)).unwrap(),
            "{name} differs between psv round trip and direct synthesis"
        );
    }
}

#[test]
fn preprocess_with_an_empty_psv_dir_exits_3() {
    let s = Scratch::new();
    let empty = s.path("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let cfg = s.write_config(
        "cfg.txt",
        &format!("source = psv\npsv_dir = {}\n", empty.display()),
    );
    let out = s.run(&[
        "preprocess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        s.path("out").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn config_faults_exit_2() {
    let s = Scratch::new();
    let unknown = s.write_config("unknown.txt", "bogus_key = 1\n");
    let out = s.run(&["preprocess", "--config", unknown.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);

    let conflicted = s.write_config("conflicted.txt", "psv_dir = somewhere\n");
    let out = s.run(&["preprocess", "--config", conflicted.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);

    let fine = s.write_config("fine.txt", "patients = 10\n");
    let out = Command::new(bin())
        .args(["synth", "--config", fine.to_str().unwrap()])
        .env("PULSEGATE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2, "junk PULSEGATE_THREADS is a config error");

    let out = s.run(&["preprocess", "--horizon", "3"]);
    assert_eq!(exit_code(&out), 2, "unsupported horizon is a config error");
}

/// Runs preprocess + train once and returns (config path, out dir).
fn preprocessed_and_trained(s: &Scratch, extra: &str) -> (PathBuf, PathBuf) {
    let cfg = s.write_config("cfg.txt", &small_config(extra));
    let out_dir = s.path("run");
    assert_ok(&s.run(&[
        "preprocess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]));
    assert_ok(&s.run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]));
    (cfg, out_dir)
}

#[test]
fn train_is_deterministic_and_emits_the_report_bundle() {
    let s = Scratch::new();
    let (cfg, out_dir) = preprocessed_and_trained(&s, "");

    for name in [
        "model_mlp_h1.bin",
        "train_log.csv",
        "metrics.json",
        "roc.csv",
        "pr.csv",
        "calibration.csv",
        "curves.svg",
        "profile.json",
        "manifest_train.json",
    ] {
        assert!(out_dir.join(name).exists(), "missing artifact {name}");
    }
    assert_eq!(data_rows(&out_dir.join("train_log.csv")), 4);

    let metrics = read_json(&out_dir.join("metrics.json"));
    for key in [
        "auroc",
        "aupr",
        "sensitivity",
        "specificity",
        "accuracy",
        "size_kb",
        "execution_time_ms",
    ] {
        assert!(metrics.get(key).is_some(), "metrics.json missing {key}");
    }

    // Rerun into a fresh directory reading the same datasets: the model file
    // must come out byte-identical.
    let rerun_cfg = s.write_config(
        "rerun.txt",
        &small_config(&format!("data_dir = {}\n", out_dir.display())),
    );
    let rerun_dir = s.path("rerun");
    assert_ok(&s.run(&[
        "train",
        "--config",
        rerun_cfg.to_str().unwrap(),
        "--out",
        rerun_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]));
    assert_eq!(
        std::fs::read(out_dir.join("model_mlp_h1.bin")).unwrap(),
        std::fs::read(rerun_dir.join("model_mlp_h1.bin")).unwrap(),
        "same config and seed must reproduce the model bytes"
    );
    drop(cfg);
}

#[test]
fn default_mlp_schedule_runs_390_epochs() {
    let s = Scratch::new();
    let cfg = s.write_config("cfg.txt", "patients = 60\nfamily = mlp\nwidths = 6,5,4\n");
    let out_dir = s.path("run");
    assert_ok(&s.run(&[
        "preprocess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_ok(&s.run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(data_rows(&out_dir.join("train_log.csv")), 390);
}

#[test]
fn lstm_model_header_decodes_to_the_configured_spec() {
    let s = Scratch::new();
    let cfg = s.write_config(
        "cfg.txt",
        "patients = 60\nfamily = lstm\nwidths = 48,108,52,20\nepochs = 2\n",
    );
    let out_dir = s.path("run");
    assert_ok(&s.run(&[
        "preprocess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_ok(&s.run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));

    let bytes = std::fs::read(out_dir.join("model_lstm_h1.bin")).unwrap();
    let model = deserialize(&bytes).expect("emitted model file must verify");
    assert_eq!(model.spec.family, ModelFamily::Lstm);
    assert_eq!(model.spec.layer_widths, vec![48, 108, 52, 20]);
    assert_eq!(model.horizon_hours, 1);
}

#[test]
fn gbdt_trains_through_the_cli() {
    let s = Scratch::new();
    let cfg = s.write_config("cfg.txt", "patients = 80\nfamily = gbdt\nn_trees = 12\n");
    let out_dir = s.path("run");
    assert_ok(&s.run(&[
        "preprocess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_ok(&s.run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(
        data_rows(&out_dir.join("train_log.csv")),
        12,
        "one log entry per boosting round"
    );
    let bytes = std::fs::read(out_dir.join("model_gbdt_h1.bin")).unwrap();
    assert_eq!(deserialize(&bytes).unwrap().spec.family, ModelFamily::Gbdt);
}

#[test]
fn optimize_surrogate_emits_full_history_and_a_valid_best_spec() {
    let s = Scratch::new();
    let cfg = s.write_config(
        "cfg.txt",
        "family = mlp\npopulation = 8\ngenerations = 5\n",
    );
    let out_dir = s.path("run");
    assert_ok(&s.run(&[
        "optimize",
        "--surrogate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]));

    let history = std::fs::read_to_string(out_dir.join("ga_history.jsonl")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines.len(), 8 * 5, "one history line per candidate slot");
    for line in &lines {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["rank_avg"].as_f64().unwrap() >= 1.0);
        assert!(record["generation"].as_u64().unwrap() < 5);
    }

    let spec: ModelSpec = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("best_spec.json")).unwrap(),
    )
    .expect("best spec file must parse back into a model spec");
    assert_eq!(spec.family, ModelFamily::Mlp);
    assert_eq!(spec.layer_widths.len(), 3);
    assert!(spec.validate().is_ok());
}

#[test]
fn optimize_with_an_unfillable_batch_exits_5() {
    let s = Scratch::new();
    // One training window cannot fill a batch of 32, so every candidate is
    // dropped by the divergence gate and the search fails as a whole.
    let header: String = format!(
        "patient_id,horizon_hours,label,augmented,{}",
        (0..12).map(|i| format!("hr_{i:02}")).collect::<Vec<_>>().join(",")
    );
    let row = |pid: &str, label: u8| format!("{pid},1,{label},0,{}", ["80"; 12].join(","));
    let data_dir = s.path("data");
    std::fs::create_dir_all(&data_dir).unwrap();
    std::fs::write(
        data_dir.join("train_h1.csv"),
        format!("{header}\n{}\n", row("a", 0)),
    )
    .unwrap();
    std::fs::write(
        data_dir.join("val_h1.csv"),
        format!("{header}\n{}\n{}\n", row("b", 0), row("c", 1)),
    )
    .unwrap();

    let cfg = s.write_config(
        "cfg.txt",
        &format!(
            "data_dir = {}\nfamily = mlp\npopulation = 4\ngenerations = 2\ncandidate_epochs = 2\n",
            data_dir.display()
        ),
    );
    let out = s.run(&[
        "optimize",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        s.path("out").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 5);
}

#[test]
fn transfer_produces_a_4h_model_and_rejects_wrong_horizons() {
    let s = Scratch::new();
    let (cfg, out_dir) = preprocessed_and_trained(&s, "");
    // Window the same cohort for the 4-hour task.
    assert_ok(&s.run(&[
        "preprocess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
        "--horizon",
        "4",
    ]));

    let model = out_dir.join("model_mlp_h1.bin");
    let tuned_dir = s.path("tuned");
    let out = s.run(&[
        "transfer",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tuned_dir.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        out_dir.join("train_h4.csv").to_str().unwrap(),
        "--eval-dataset",
        out_dir.join("test_h4.csv").to_str().unwrap(),
        "--epochs",
        "2",
    ]);
    assert_ok(&out);

    let tuned_path = tuned_dir.join("model_mlp_h4.bin");
    let tuned = deserialize(&std::fs::read(&tuned_path).unwrap()).unwrap();
    assert_eq!(tuned.horizon_hours, 4);
    assert_eq!(data_rows(&tuned_dir.join("train_log.csv")), 2);
    assert!(tuned_dir.join("metrics.json").exists());

    // A 4-hour model is not a valid transfer source.
    let out = s.run(&[
        "transfer",
        "--out",
        s.path("tuned_again").to_str().unwrap(),
        "--model",
        tuned_path.to_str().unwrap(),
        "--dataset",
        out_dir.join("train_h4.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 6);

    // Fine-tuning toward the 1-hour task is equally out of contract.
    let out = s.run(&[
        "transfer",
        "--out",
        s.path("tuned_h1").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        out_dir.join("train_h1.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 6);
}

#[test]
fn evaluate_reports_and_enforces_horizons() {
    let s = Scratch::new();
    let (cfg, out_dir) = preprocessed_and_trained(&s, "");
    assert_ok(&s.run(&[
        "preprocess",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
        "--horizon",
        "4",
    ]));

    let model = out_dir.join("model_mlp_h1.bin");
    let eval_dir = s.path("eval");
    let out = s.run(&[
        "evaluate",
        "--out",
        eval_dir.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        out_dir.join("test_h1.csv").to_str().unwrap(),
    ]);
    assert_ok(&out);
    let metrics = read_json(&eval_dir.join("metrics.json"));
    let auroc = metrics["auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auroc));
    assert!(eval_dir.join("profile.json").exists());

    // Identical inputs must reproduce every non-latency byte.
    let eval_dir2 = s.path("eval2");
    assert_ok(&s.run(&[
        "evaluate",
        "--out",
        eval_dir2.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        out_dir.join("test_h1.csv").to_str().unwrap(),
    ]));
    for name in ["roc.csv", "pr.csv", "calibration.csv"] {
        assert_eq!(
            std::fs::read(eval_dir.join(name)).unwrap(),
            std::fs::read(eval_dir2.join(name)).unwrap(),
            "{name} differs between identical evaluate runs"
        );
    }

    let out = s.run(&[
        "evaluate",
        "--out",
        s.path("eval_bad").to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        out_dir.join("test_h4.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 6);

    let out = s.run(&[
        "evaluate",
        "--out",
        s.path("eval_missing").to_str().unwrap(),
        "--model",
        s.path("nope.bin").to_str().unwrap(),
        "--dataset",
        out_dir.join("test_h1.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3);
}

#[test]
fn profile_round_trips_repeats_and_reports_the_exact_size() {
    let s = Scratch::new();
    let (_cfg, out_dir) = preprocessed_and_trained(&s, "");
    let model = out_dir.join("model_mlp_h1.bin");
    let profile_dir = s.path("profile");
    let out = s.run(&[
        "profile",
        "--out",
        profile_dir.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        out_dir.join("test_h1.csv").to_str().unwrap(),
        "--repeats",
        "9",
        "--warmup",
        "2",
    ]);
    assert_ok(&out);

    let profile = read_json(&profile_dir.join("profile.json"));
    assert_eq!(profile["latency_samples"], 9);
    assert_eq!(profile["warmup_discarded"], 2);
    assert_eq!(
        profile["size_bytes"].as_u64().unwrap(),
        std::fs::metadata(&model).unwrap().len(),
        "reported size must equal the file's byte length"
    );
    assert!(profile["mean_latency_ms"].as_f64().unwrap() > 0.0);

    let out = s.run(&[
        "profile",
        "--out",
        s.path("profile_missing").to_str().unwrap(),
        "--model",
        s.path("nope.bin").to_str().unwrap(),
        "--dataset",
        out_dir.join("test_h1.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3);
}
