//! Run configuration: one plain-text key=value file plus flag overrides.
//!
//! Every tunable has a documented key and a default, so a bare command line
//! runs a small synthetic demo end to end. Flags win over file values; both
//! win over defaults. Unknown keys are rejected rather than ignored so a
//! typo cannot silently fall back to a default.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pulsegate_core::boosting::GbdtParams;
use pulsegate_core::gaopt::GaConfig;
use pulsegate_core::models::{ModelFamily, ModelSpec, TrainConfig};
use pulsegate_core::stream::derive_seed;
use pulsegate_core::windowing::{SplitSpec, SyntheticCohortParams};

use crate::error::{io_at, CliError};

/// Keys accepted in a config file. Anything else is a config error.
const KNOWN_KEYS: [&str; 36] = [
    "source",
    "psv_dir",
    "patients",
    "sepsis_fraction",
    "baseline_hr_mean",
    "baseline_hr_sd",
    "drift_per_hour",
    "missing_rate",
    "horizon",
    "seed",
    "out_dir",
    "data_dir",
    "train_fraction",
    "val_fraction",
    "test_fraction",
    "target_prevalence",
    "family",
    "widths",
    "num_leaves",
    "max_bin",
    "gbdt_learning_rate",
    "n_trees",
    "min_samples_leaf",
    "epochs",
    "batch_size",
    "learning_rate",
    "population",
    "generations",
    "crossover_prob",
    "mutation_prob",
    "elite_count",
    "candidate_epochs",
    "surrogate_targets",
    "fine_tune_epochs",
    "latency_repeats",
    "latency_warmup",
];

/// Where windows come from: a directory of per-patient PSV files or a
/// seeded synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Psv(PathBuf),
}

/// Flag values shared by every subcommand; `None` defers to the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub horizon: Option<u8>,
}

/// Fully resolved settings for one run. All seeds used anywhere downstream
/// are derived from `seed` via named substreams.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: DataSource,
    pub horizon: u8,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Where train/val/test CSVs are read from; defaults to `out_dir`.
    pub data_dir: PathBuf,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub target_prevalence: f64,
    pub family: ModelFamily,
    /// Explicit layer widths; `None` uses the family's reference widths.
    pub widths: Option<Vec<usize>>,
    pub gbdt: GbdtParams,
    /// Explicit epoch count; `None` uses the family's reference schedule.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub elite_count: usize,
    pub candidate_epochs: usize,
    /// Optimum of the surrogate search; `None` uses the family's reference
    /// widths.
    pub surrogate_targets: Option<Vec<usize>>,
    pub fine_tune_epochs: Option<usize>,
    pub latency_repeats: usize,
    pub latency_warmup: usize,
    pub patients: usize,
    pub sepsis_fraction: f64,
    pub baseline_hr_mean: f64,
    pub baseline_hr_sd: f64,
    pub drift_per_hour: f64,
    pub missing_rate: f64,
}

/// Parse one config file into a key -> value map. Blank lines and lines
/// starting with `#` are skipped; duplicate keys are errors.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", idx + 1)))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("config line {}: unknown key `{key}`", idx + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::Config(format!("config line {}: duplicate key `{key}`", idx + 1)));
        }
    }
    Ok(map)
}

fn get_opt_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::Config(format!("config key `{key}`: cannot parse `{v}`"))),
    }
}

fn get_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    Ok(get_opt_parsed(map, key)?.unwrap_or(default))
}

fn parse_widths(value: &str, key: &str) -> Result<Vec<usize>, CliError> {
    let widths: Result<Vec<usize>, _> = value.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match widths {
        Ok(w) if !w.is_empty() => Ok(w),
        _ => Err(CliError::Config(format!(
            "config key `{key}`: expected comma-separated layer widths, got `{value}`"
        ))),
    }
}

fn parse_family(value: &str) -> Result<ModelFamily, CliError> {
    match value {
        "mlp" => Ok(ModelFamily::Mlp),
        "lstm" => Ok(ModelFamily::Lstm),
        "lstm_fcn" => Ok(ModelFamily::LstmFcn),
        "gbdt" => Ok(ModelFamily::Gbdt),
        _ => Err(CliError::Config(format!(
            "config key `family`: expected mlp|lstm|lstm_fcn|gbdt, got `{value}`"
        ))),
    }
}

/// Reference widths per family (the published architectures).
pub fn reference_widths(family: ModelFamily) -> Vec<usize> {
    match family {
        ModelFamily::Mlp => vec![100, 148, 74],
        ModelFamily::Lstm => vec![48, 108, 52, 20],
        ModelFamily::LstmFcn => vec![32],
        ModelFamily::Gbdt => Vec::new(),
    }
}

impl RunConfig {
    /// Resolve file + flags + defaults into one concrete configuration.
    pub fn resolve(over: &Overrides) -> Result<Self, CliError> {
        let map = match &over.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| io_at(path, e))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };

        let source = match map.get("source").map(String::as_str) {
            None | Some("synthetic") => {
                if map.contains_key("psv_dir") {
                    return Err(CliError::Config(
                        "config sets psv_dir but source is synthetic; pick exactly one data source"
                            .into(),
                    ));
                }
                DataSource::Synthetic
            }
            Some("psv") => {
                let dir = map.get("psv_dir").ok_or_else(|| {
                    CliError::Config("source = psv requires a psv_dir key".into())
                })?;
                DataSource::Psv(PathBuf::from(dir))
            }
            Some(other) => {
                return Err(CliError::Config(format!(
                    "config key `source`: expected synthetic|psv, got `{other}`"
                )))
            }
        };

        let horizon = match over.horizon {
            Some(h) => h,
            None => get_parsed(&map, "horizon", 1u8)?,
        };
        if horizon != 1 && horizon != 4 {
            return Err(CliError::Config(format!(
                "horizon must be 1 or 4, got {horizon}"
            )));
        }

        let seed = match over.seed {
            Some(s) => s,
            None => get_parsed(&map, "seed", 7u64)?,
        };
        let out_dir = match &over.out {
            Some(dir) => dir.clone(),
            None => PathBuf::from(map.get("out_dir").map(String::as_str).unwrap_or("out")),
        };
        let data_dir = map
            .get("data_dir")
            .map(PathBuf::from)
            .unwrap_or_else(|| out_dir.clone());

        let family = match map.get("family") {
            Some(v) => parse_family(v)?,
            None => ModelFamily::Mlp,
        };
        let widths = match map.get("widths") {
            Some(v) => Some(parse_widths(v, "widths")?),
            None => None,
        };
        let surrogate_targets = match map.get("surrogate_targets") {
            Some(v) => Some(parse_widths(v, "surrogate_targets")?),
            None => None,
        };

        let gbdt_defaults = GbdtParams::default();
        let gbdt = GbdtParams {
            num_leaves: get_parsed(&map, "num_leaves", gbdt_defaults.num_leaves)?,
            max_bin: get_parsed(&map, "max_bin", gbdt_defaults.max_bin)?,
            learning_rate: get_parsed(&map, "gbdt_learning_rate", gbdt_defaults.learning_rate)?,
            n_trees: get_parsed(&map, "n_trees", gbdt_defaults.n_trees)?,
            min_samples_leaf: get_parsed(&map, "min_samples_leaf", gbdt_defaults.min_samples_leaf)?,
        };

        let epochs = get_opt_parsed(&map, "epochs")?;
        let fine_tune_epochs = get_opt_parsed(&map, "fine_tune_epochs")?;

        let ga_defaults = GaConfig::default();
        Ok(Self {
            source,
            horizon,
            seed,
            out_dir,
            data_dir,
            train_fraction: get_parsed(&map, "train_fraction", 0.7)?,
            val_fraction: get_parsed(&map, "val_fraction", 0.15)?,
            test_fraction: get_parsed(&map, "test_fraction", 0.15)?,
            target_prevalence: get_parsed(&map, "target_prevalence", 0.3)?,
            family,
            widths,
            gbdt,
            epochs,
            batch_size: get_parsed(&map, "batch_size", 32usize)?,
            learning_rate: get_parsed(&map, "learning_rate", 0.001)?,
            population: get_parsed(&map, "population", ga_defaults.population_size)?,
            generations: get_parsed(&map, "generations", ga_defaults.generations)?,
            crossover_prob: get_parsed(&map, "crossover_prob", ga_defaults.crossover_prob)?,
            mutation_prob: get_parsed(&map, "mutation_prob", ga_defaults.mutation_prob_per_bit)?,
            elite_count: get_parsed(&map, "elite_count", ga_defaults.elite_count)?,
            candidate_epochs: get_parsed(&map, "candidate_epochs", ga_defaults.candidate_epochs)?,
            surrogate_targets,
            fine_tune_epochs,
            latency_repeats: get_parsed(&map, "latency_repeats", 30usize)?,
            latency_warmup: get_parsed(&map, "latency_warmup", 3usize)?,
            patients: get_parsed(&map, "patients", 200usize)?,
            sepsis_fraction: get_parsed(&map, "sepsis_fraction", 0.3)?,
            baseline_hr_mean: get_parsed(&map, "baseline_hr_mean", 80.0)?,
            baseline_hr_sd: get_parsed(&map, "baseline_hr_sd", 8.0)?,
            drift_per_hour: get_parsed(&map, "drift_per_hour", 2.0)?,
            missing_rate: get_parsed(&map, "missing_rate", 0.05)?,
        })
    }

    /// Synthetic-cohort parameters with the cohort seed derived from the
    /// global seed.
    pub fn synth_params(&self) -> SyntheticCohortParams {
        SyntheticCohortParams {
            n_patients: self.patients,
            sepsis_fraction: self.sepsis_fraction,
            baseline_hr_mean: self.baseline_hr_mean,
            baseline_hr_sd: self.baseline_hr_sd,
            drift_per_hour: self.drift_per_hour,
            missing_rate: self.missing_rate,
            seed: derive_seed(self.seed, "cli/synth", &[]),
        }
    }

    /// Patient-level split keyed off the global seed only, so both horizons
    /// of one cohort assign patients identically.
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            seed: derive_seed(self.seed, "cli/split", &[]),
        }
    }

    /// The architecture this run trains or fine-tunes.
    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let widths = self
            .widths
            .clone()
            .unwrap_or_else(|| reference_widths(self.family));
        let spec = match self.family {
            ModelFamily::Mlp => {
                let [a, b, c]: [usize; 3] = widths.try_into().map_err(|w: Vec<usize>| {
                    CliError::Config(format!("family mlp takes 3 widths, got {}", w.len()))
                })?;
                ModelSpec::mlp([a, b, c])
            }
            ModelFamily::Lstm => {
                let [a, b, c, d]: [usize; 4] = widths.try_into().map_err(|w: Vec<usize>| {
                    CliError::Config(format!("family lstm takes 4 widths, got {}", w.len()))
                })?;
                ModelSpec::lstm([a, b, c, d])
            }
            ModelFamily::LstmFcn => {
                if self.widths.is_some() {
                    return Err(CliError::Config(
                        "family lstm_fcn has a fixed architecture; drop the widths key".into(),
                    ));
                }
                ModelSpec::lstm_fcn()
            }
            ModelFamily::Gbdt => {
                if self.widths.is_some() {
                    return Err(CliError::Config(
                        "family gbdt has no layer widths; drop the widths key".into(),
                    ));
                }
                ModelSpec::gbdt(&self.gbdt)
            }
        };
        spec.validate().map_err(CliError::from)?;
        Ok(spec)
    }

    /// Epoch-loop settings with the shuffle substream derived per horizon.
    pub fn train_config(&self) -> TrainConfig {
        let mut tc = TrainConfig::default_for(self.family);
        if let Some(epochs) = self.epochs {
            tc.epochs = epochs;
        }
        tc.batch_size = self.batch_size;
        tc.learning_rate = self.learning_rate;
        tc.shuffle_seed = derive_seed(self.seed, "cli/shuffle", &[u64::from(self.horizon)]);
        tc
    }

    /// Weight-init seed for freshly built neural models.
    pub fn weights_seed(&self) -> u64 {
        derive_seed(self.seed, "cli/weights", &[u64::from(self.horizon)])
    }

    /// Search settings with the search substream derived from the global
    /// seed.
    pub fn ga_config(&self) -> GaConfig {
        GaConfig {
            population_size: self.population,
            generations: self.generations,
            crossover_prob: self.crossover_prob,
            mutation_prob_per_bit: self.mutation_prob,
            elite_count: self.elite_count,
            candidate_epochs: self.candidate_epochs,
            seed: derive_seed(self.seed, "cli/ga", &[]),
        }
    }

    /// Resolved settings rendered back to key = value form for the manifest.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        match &self.source {
            DataSource::Synthetic => put("source", "synthetic".into()),
            DataSource::Psv(dir) => {
                put("source", "psv".into());
                put("psv_dir", dir.display().to_string());
            }
        }
        put("horizon", self.horizon.to_string());
        put("seed", self.seed.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("data_dir", self.data_dir.display().to_string());
        put("train_fraction", self.train_fraction.to_string());
        put("val_fraction", self.val_fraction.to_string());
        put("test_fraction", self.test_fraction.to_string());
        put("target_prevalence", self.target_prevalence.to_string());
        put("family", self.family.as_str().to_string());
        if matches!(self.family, ModelFamily::Mlp | ModelFamily::Lstm) {
            let widths = self
                .widths
                .clone()
                .unwrap_or_else(|| reference_widths(self.family));
            put(
                "widths",
                widths.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            );
        }
        if let Some(targets) = &self.surrogate_targets {
            put(
                "surrogate_targets",
                targets.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            );
        }
        if let Some(epochs) = self.fine_tune_epochs {
            put("fine_tune_epochs", epochs.to_string());
        }
        put("num_leaves", self.gbdt.num_leaves.to_string());
        put("max_bin", self.gbdt.max_bin.to_string());
        put("gbdt_learning_rate", self.gbdt.learning_rate.to_string());
        put("n_trees", self.gbdt.n_trees.to_string());
        put("min_samples_leaf", self.gbdt.min_samples_leaf.to_string());
        put("epochs", self.train_config().epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("population", self.population.to_string());
        put("generations", self.generations.to_string());
        put("crossover_prob", self.crossover_prob.to_string());
        put("mutation_prob", self.mutation_prob.to_string());
        put("elite_count", self.elite_count.to_string());
        put("candidate_epochs", self.candidate_epochs.to_string());
        put("latency_repeats", self.latency_repeats.to_string());
        put("latency_warmup", self.latency_warmup.to_string());
        put("patients", self.patients.to_string());
        put("sepsis_fraction", self.sepsis_fraction.to_string());
        put("baseline_hr_mean", self.baseline_hr_mean.to_string());
        put("baseline_hr_sd", self.baseline_hr_sd.to_string());
        put("drift_per_hour", self.drift_per_hour.to_string());
        put("missing_rate", self.missing_rate.to_string());
        map
    }

    /// Path of a split CSV under the data directory.
    pub fn split_path(&self, part: &str) -> PathBuf {
        self.data_dir.join(format!("{part}_h{}.csv", self.horizon))
    }

    /// File name for a trained model artifact.
    pub fn model_file_name(family: ModelFamily, horizon: u8) -> String {
        format!("model_{}_h{horizon}.bin", family.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::path::Path;

    fn resolve_from_path(path: &Path) -> Result<RunConfig, CliError> {
        RunConfig::resolve(&Overrides {
            config: Some(path.to_path_buf()),
            ..Overrides::default()
        })
    }

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_resolve_without_a_file() {
        let cfg = RunConfig::resolve(&Overrides::default()).unwrap();
        assert_eq!(cfg.source, DataSource::Synthetic);
        assert_eq!(cfg.horizon, 1);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        assert_eq!(cfg.data_dir, cfg.out_dir);
        assert_eq!(cfg.family, ModelFamily::Mlp);
        assert_eq!(cfg.train_config().epochs, 390);
    }

    #[test]
    fn comments_blanks_and_spacing_parse() {
        let map = parse_config_text("# note\n\n  seed = 11 \nhorizon=4\n").unwrap();
        assert_eq!(map.get("seed").unwrap(), "11");
        assert_eq!(map.get("horizon").unwrap(), "4");
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(matches!(
            parse_config_text("bogus = 1\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            parse_config_text("seed = 1\nseed = 2\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(parse_config_text("seed\n"), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_override_file_values() {
        let f = write_config("seed = 3\nhorizon = 4\nout_dir = from_file\n");
        let cfg = RunConfig::resolve(&Overrides {
            config: Some(f.path().to_path_buf()),
            seed: Some(99),
            out: Some(PathBuf::from("from_flag")),
            horizon: Some(1),
        })
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.horizon, 1);
        assert_eq!(cfg.out_dir, PathBuf::from("from_flag"));
    }

    #[test]
    fn exactly_one_data_source_is_enforced() {
        let f = write_config("psv_dir = somewhere\n");
        assert!(matches!(resolve_from_path(f.path()), Err(CliError::Config(_))));
        let f = write_config("source = psv\n");
        assert!(matches!(resolve_from_path(f.path()), Err(CliError::Config(_))));
        let f = write_config("source = psv\npsv_dir = somewhere\n");
        let cfg = resolve_from_path(f.path()).unwrap();
        assert_eq!(cfg.source, DataSource::Psv(PathBuf::from("somewhere")));
    }

    #[test]
    fn horizon_outside_the_supported_pair_is_rejected() {
        let f = write_config("horizon = 3\n");
        assert!(matches!(resolve_from_path(f.path()), Err(CliError::Config(_))));
    }

    #[test]
    fn model_spec_checks_width_arity() {
        let f = write_config("family = mlp\nwidths = 10,20\n");
        let cfg = resolve_from_path(f.path()).unwrap();
        assert!(matches!(cfg.model_spec(), Err(CliError::Config(_))));

        let f = write_config("family = lstm\nwidths = 48,108,52,20\n");
        let cfg = resolve_from_path(f.path()).unwrap();
        assert_eq!(cfg.model_spec().unwrap().layer_widths, vec![48, 108, 52, 20]);

        let f = write_config("family = lstm_fcn\nwidths = 48\n");
        let cfg = resolve_from_path(f.path()).unwrap();
        assert!(matches!(cfg.model_spec(), Err(CliError::Config(_))));
    }

    #[test]
    fn reference_widths_fill_in_when_absent() {
        let f = write_config("family = lstm\n");
        let cfg = resolve_from_path(f.path()).unwrap();
        assert_eq!(cfg.model_spec().unwrap().layer_widths, vec![48, 108, 52, 20]);
        assert_eq!(cfg.train_config().epochs, 190);
    }

    #[test]
    fn seeds_derive_distinct_substreams() {
        let cfg = RunConfig::resolve(&Overrides::default()).unwrap();
        let all = [
            cfg.synth_params().seed,
            cfg.split_spec().seed,
            cfg.train_config().shuffle_seed,
            cfg.weights_seed(),
            cfg.ga_config().seed,
        ];
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                assert_ne!(all[i], all[j], "substreams {i} and {j} collide");
            }
        }
    }

    #[test]
    fn snapshot_round_trips_through_the_parser() {
        let f = write_config("family = gbdt\nn_trees = 17\nseed = 5\n");
        let cfg = resolve_from_path(f.path()).unwrap();
        let text: String = cfg
            .snapshot()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let reparsed = parse_config_text(&text).unwrap();
        assert_eq!(reparsed.get("n_trees").unwrap(), "17");
        assert_eq!(reparsed.get("family").unwrap(), "gbdt");
    }
}
