//! Genetic search over bit-string architecture genes.
//!
//! Candidate architectures are encoded as fixed-width genes, 8 bits per
//! parameter, most significant bit first. Each generation is trained and
//! scored on three criteria (validation performance, prediction latency,
//! serialized size), ranked per criterion with mean-shared ties, and bred by
//! elitist copy, roulette selection, single-point crossover, and per-bit
//! mutation. The search is a pure function of the datasets and the configured
//! seed: every candidate draws a named substream keyed by generation and slot,
//! so results do not depend on evaluation order or thread scheduling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::boosting::GbdtParams;
use crate::eval::{measure_latency, threshold_at_sensitivity, ScoredSet};
use crate::models::{
    build, predict, predict_many, serialize, train, train_gbdt, ModelFamily, ModelSpec,
    TrainConfig, TrainedModel,
};
use crate::stream::{derive_rng, derive_seed, splitmix64};
use crate::windowing::LabeledDataset;

/// Bits per encoded architecture parameter.
pub const BITS_PER_GROUP: usize = 8;

/// Tree count is not searched; every decoded boosting spec uses this value.
pub const GBDT_SEARCH_TREES: usize = 100;
/// Leaf occupancy floor is not searched either.
pub const GBDT_SEARCH_MIN_LEAF: usize = 1;
/// Searchable learning-rate range for boosting genes.
pub const GBDT_LEARNING_RATE_MIN: f64 = 0.005;
pub const GBDT_LEARNING_RATE_MAX: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum GaError {
    #[error("gene holds {found} bits, expected {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("every candidate diverged in every generation")]
    AllDiverged,
    #[error("bad search configuration: {0}")]
    BadConfig(String),
}

/// Fixed-width bit string; `bits[0]` is the most significant bit of the first
/// 8-bit group.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Gene {
    bits: Vec<bool>,
}

impl Gene {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn group_count(&self) -> usize {
        self.bits.len() / BITS_PER_GROUP
    }

    /// Value of 8-bit group `index`, read most significant bit first.
    pub fn group_value(&self, index: usize) -> u8 {
        self.bits[index * BITS_PER_GROUP..(index + 1) * BITS_PER_GROUP]
            .iter()
            .fold(0u8, |acc, &bit| (acc << 1) | u8::from(bit))
    }

    /// Lowercase hex, one byte per group.
    pub fn to_hex(&self) -> String {
        (0..self.group_count())
            .map(|i| format!("{:02x}", self.group_value(i)))
            .collect()
    }
}

/// Gene width in bits for a searchable family. The hybrid family keeps its
/// fixed reference architecture and is rejected.
pub fn gene_width(family: ModelFamily) -> Result<usize, GaError> {
    match family {
        ModelFamily::Mlp => Ok(3 * BITS_PER_GROUP),
        ModelFamily::Lstm => Ok(4 * BITS_PER_GROUP),
        ModelFamily::Gbdt => Ok(3 * BITS_PER_GROUP),
        ModelFamily::LstmFcn => Err(GaError::BadConfig(
            "the hybrid family uses a fixed architecture and is not searched".into(),
        )),
    }
}

/// A zero raw width would describe an empty layer, so it clamps to 1.
fn clamp_width(raw: u8) -> usize {
    usize::from(raw).max(1)
}

/// Decode a gene into a model spec. Neural groups map to layer widths
/// (clamped to at least 1); boosting groups map to leaves 2-257, bins 8-263,
/// and a learning rate on [0.005, 0.3].
pub fn decode_gene(gene: &Gene, family: ModelFamily) -> Result<ModelSpec, GaError> {
    let expected = gene_width(family)?;
    if gene.width() != expected {
        return Err(GaError::WidthMismatch {
            expected,
            found: gene.width(),
        });
    }
    let raw: Vec<u8> = (0..gene.group_count()).map(|i| gene.group_value(i)).collect();
    Ok(match family {
        ModelFamily::Mlp => ModelSpec::mlp([
            clamp_width(raw[0]),
            clamp_width(raw[1]),
            clamp_width(raw[2]),
        ]),
        ModelFamily::Lstm => ModelSpec::lstm([
            clamp_width(raw[0]),
            clamp_width(raw[1]),
            clamp_width(raw[2]),
            clamp_width(raw[3]),
        ]),
        ModelFamily::Gbdt => ModelSpec::gbdt(&GbdtParams {
            num_leaves: 2 + usize::from(raw[0]),
            max_bin: 8 + usize::from(raw[1]),
            learning_rate: GBDT_LEARNING_RATE_MIN
                + f64::from(raw[2]) * (GBDT_LEARNING_RATE_MAX - GBDT_LEARNING_RATE_MIN) / 255.0,
            n_trees: GBDT_SEARCH_TREES,
            min_samples_leaf: GBDT_SEARCH_MIN_LEAF,
        }),
        ModelFamily::LstmFcn => unreachable!("gene_width rejects the hybrid family"),
    })
}

/// Inverse of [`decode_gene`] for specs inside the searchable ranges;
/// `decode(encode(spec)) == spec` always, and `encode(decode(gene)) == gene`
/// whenever no group needed clamping.
pub fn encode_gene(spec: &ModelSpec) -> Result<Gene, GaError> {
    let raw: Vec<u8> = match spec.family {
        ModelFamily::Mlp | ModelFamily::Lstm => {
            let expected_groups = gene_width(spec.family)? / BITS_PER_GROUP;
            if spec.layer_widths.len() != expected_groups {
                return Err(GaError::BadConfig(format!(
                    "{} searches {expected_groups} widths, got {}",
                    spec.family.as_str(),
                    spec.layer_widths.len()
                )));
            }
            spec.layer_widths
                .iter()
                .map(|&w| {
                    if (1..=255).contains(&w) {
                        Ok(w as u8)
                    } else {
                        Err(GaError::BadConfig(format!(
                            "layer width {w} is outside the encodable 1-255"
                        )))
                    }
                })
                .collect::<Result<_, _>>()?
        }
        ModelFamily::Gbdt => {
            let params = spec
                .gbdt_params()
                .map_err(|e| GaError::BadConfig(e.to_string()))?;
            if params.n_trees != GBDT_SEARCH_TREES || params.min_samples_leaf != GBDT_SEARCH_MIN_LEAF
            {
                return Err(GaError::BadConfig(
                    "tree count and leaf floor are fixed, not searched".into(),
                ));
            }
            let leaves = params
                .num_leaves
                .checked_sub(2)
                .filter(|&v| v <= 255)
                .ok_or_else(|| {
                    GaError::BadConfig(format!(
                        "num_leaves {} is outside the encodable 2-257",
                        params.num_leaves
                    ))
                })?;
            let bins = params
                .max_bin
                .checked_sub(8)
                .filter(|&v| v <= 255)
                .ok_or_else(|| {
                    GaError::BadConfig(format!(
                        "max_bin {} is outside the encodable 8-263",
                        params.max_bin
                    ))
                })?;
            let lr_raw = ((params.learning_rate - GBDT_LEARNING_RATE_MIN) * 255.0
                / (GBDT_LEARNING_RATE_MAX - GBDT_LEARNING_RATE_MIN))
                .round();
            if !(0.0..=255.0).contains(&lr_raw) {
                return Err(GaError::BadConfig(format!(
                    "learning rate {} is outside the encodable range",
                    params.learning_rate
                )));
            }
            vec![leaves as u8, bins as u8, lr_raw as u8]
        }
        ModelFamily::LstmFcn => {
            return Err(GaError::BadConfig(
                "the hybrid family uses a fixed architecture and is not searched".into(),
            ))
        }
    };
    let bits = raw
        .iter()
        .flat_map(|&byte| (0..BITS_PER_GROUP).rev().map(move |k| byte >> k & 1 == 1))
        .collect();
    Ok(Gene::from_bits(bits))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob_per_bit: f64,
    pub elite_count: usize,
    /// Training budget per candidate, in epochs.
    pub candidate_epochs: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 20,
            generations: 15,
            crossover_prob: 0.7,
            mutation_prob_per_bit: 0.02,
            elite_count: 1,
            candidate_epochs: 20,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        if self.population_size < 2 {
            return Err(GaError::BadConfig(format!(
                "population must hold at least 2 candidates, got {}",
                self.population_size
            )));
        }
        if self.generations == 0 {
            return Err(GaError::BadConfig("generations must be at least 1".into()));
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob_per_bit", self.mutation_prob_per_bit),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GaError::BadConfig(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if self.elite_count >= self.population_size {
            return Err(GaError::BadConfig(format!(
                "elite_count {} must be below the population size {}",
                self.elite_count, self.population_size
            )));
        }
        if self.candidate_epochs == 0 {
            return Err(GaError::BadConfig(
                "candidate_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluated candidate. For diverged candidates the three criteria are
/// zeroed and only `diverged` is meaningful; `rank_avg` stays 0 until
/// [`rank_average_fitness`] fills it (lower is better).
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessRecord {
    pub gene: Gene,
    pub spec: ModelSpec,
    /// Accuracy plus specificity at the sensitivity-0.85 operating point;
    /// higher is better.
    pub performance: f64,
    pub latency_ms: f64,
    pub size_bytes: u64,
    pub diverged: bool,
    pub rank_avg: f64,
}

/// Flat serializable form of a fitness record for history logs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRecord {
    pub generation: usize,
    /// Gene bytes as lowercase hex.
    pub gene: String,
    pub spec: ModelSpec,
    pub performance: f64,
    pub latency_ms: f64,
    pub size_bytes: u64,
    pub diverged: bool,
    pub rank_avg: f64,
}

impl HistoryRecord {
    pub fn from_record(generation: usize, record: &FitnessRecord) -> Self {
        Self {
            generation,
            gene: record.gene.to_hex(),
            spec: record.spec.clone(),
            performance: record.performance,
            latency_ms: record.latency_ms,
            size_bytes: record.size_bytes,
            diverged: record.diverged,
            rank_avg: record.rank_avg,
        }
    }
}

/// Trains and scores one candidate. `train_and_score` may run in parallel
/// across a generation; `latency_ms` is always called sequentially afterwards
/// so the timed thread is never shared.
pub trait CandidateEvaluator: Sync {
    type Trained: Send;

    /// Returns the trained artifact, the performance criterion, and the
    /// serialized size in bytes, or `None` when the candidate diverged.
    fn train_and_score(&self, spec: &ModelSpec, stream_seed: u64)
        -> Option<(Self::Trained, f64, u64)>;

    fn latency_ms(&self, trained: &Self::Trained) -> f64;
}

/// Training made things worse overall: the mean of the first two epoch losses
/// sits below the mean of the last two. An empty log also counts as diverged.
pub fn diverged_by_gate(train_log: &[f64]) -> bool {
    if train_log.is_empty() {
        return true;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let head = &train_log[..train_log.len().min(2)];
    let tail = &train_log[train_log.len().saturating_sub(2)..];
    mean(head) < mean(tail)
}

/// Real evaluator: trains each candidate on the training split for a short
/// epoch budget, gates on the divergence rule, and scores survivors on the
/// validation split.
pub struct DatasetEvaluator<'a> {
    train_set: &'a LabeledDataset,
    val_set: &'a LabeledDataset,
    candidate_epochs: usize,
    target_sensitivity: f64,
    latency_repeats: usize,
    latency_warmup: usize,
}

impl<'a> DatasetEvaluator<'a> {
    pub fn new(
        train_set: &'a LabeledDataset,
        val_set: &'a LabeledDataset,
        candidate_epochs: usize,
    ) -> Result<Self, GaError> {
        if train_set.len() == 0 {
            return Err(GaError::BadConfig("training split is empty".into()));
        }
        let val_pos = val_set.sepsis_count();
        if val_pos == 0 || val_pos == val_set.len() {
            return Err(GaError::BadConfig(
                "validation split needs both classes to place an operating point".into(),
            ));
        }
        if train_set.horizon_hours != val_set.horizon_hours {
            return Err(GaError::BadConfig(format!(
                "split horizons differ: train {}h, validation {}h",
                train_set.horizon_hours, val_set.horizon_hours
            )));
        }
        if candidate_epochs == 0 {
            return Err(GaError::BadConfig(
                "candidate_epochs must be at least 1".into(),
            ));
        }
        Ok(Self {
            train_set,
            val_set,
            candidate_epochs,
            target_sensitivity: 0.85,
            latency_repeats: 5,
            latency_warmup: 1,
        })
    }

    pub fn with_latency_sampling(mut self, repeats: usize, warmup: usize) -> Self {
        self.latency_repeats = repeats;
        self.latency_warmup = warmup;
        self
    }

    fn fit(&self, spec: &ModelSpec, stream_seed: u64) -> Option<TrainedModel> {
        if spec.family == ModelFamily::Gbdt {
            // Boosting is deterministic given the data; the stream is unused.
            return train_gbdt(spec, self.train_set).ok();
        }
        let shell = build(
            spec,
            self.train_set.horizon_hours,
            derive_seed(stream_seed, "gaopt/weights", &[]),
        )
        .ok()?;
        let config = TrainConfig::default_for(spec.family)
            .with_epochs(self.candidate_epochs)
            .with_shuffle_seed(derive_seed(stream_seed, "gaopt/shuffle", &[]));
        // Non-finite losses surface as an error here and count as divergence.
        train(&shell, self.train_set, None, &config).ok()
    }
}

impl CandidateEvaluator for DatasetEvaluator<'_> {
    type Trained = TrainedModel;

    fn train_and_score(
        &self,
        spec: &ModelSpec,
        stream_seed: u64,
    ) -> Option<(TrainedModel, f64, u64)> {
        let trained = self.fit(spec, stream_seed)?;
        if diverged_by_gate(&trained.train_log) {
            return None;
        }
        let scores = predict_many(&trained, &self.val_set.windows);
        let labels = self.val_set.windows.iter().map(|w| w.label.as_u8()).collect();
        let scored = ScoredSet::new(scores, labels).ok()?;
        let op = threshold_at_sensitivity(&scored, self.target_sensitivity).ok()?;
        let size_bytes = serialize(&trained).len() as u64;
        Some((trained, op.accuracy + op.specificity, size_bytes))
    }

    fn latency_ms(&self, trained: &TrainedModel) -> f64 {
        let windows = &self.val_set.windows;
        measure_latency(
            || {
                for window in windows {
                    std::hint::black_box(predict(trained, &window.values));
                }
            },
            windows.len(),
            self.latency_repeats,
            self.latency_warmup,
        )
        .per_prediction_ms
    }
}

/// Byte cost per unit of surrogate distance; 2^40 keeps distinct jittered
/// distances distinct after the cast to integer bytes.
const SURROGATE_BYTES_PER_UNIT: f64 = 1_099_511_627_776.0;

/// Deterministic evaluator for exercising the search loop without training:
/// fitness is the L1 distance between the decoded layer widths and a target.
///
/// All three criteria are strictly monotone in the same jittered distance, so
/// the three per-criterion rankings coincide and the generation's minimum
/// rank average is exactly 1, which makes the elitism invariant directly
/// observable. The jitter is derived from the candidate's stream seed, stays
/// below 1e-3, and therefore breaks ties between equal-width slots without
/// ever reordering distinct integer distances.
pub struct SurrogateEvaluator {
    target_widths: Vec<usize>,
}

impl SurrogateEvaluator {
    pub fn new(target_widths: Vec<usize>) -> Self {
        Self { target_widths }
    }

    /// L1 distance between decoded widths and the target.
    pub fn distance(&self, spec: &ModelSpec) -> u64 {
        spec.layer_widths
            .iter()
            .zip(&self.target_widths)
            .map(|(&w, &t)| w.abs_diff(t) as u64)
            .sum()
    }

    fn keyed_distance(&self, spec: &ModelSpec, stream_seed: u64) -> f64 {
        let mut key = stream_seed;
        for &w in &spec.layer_widths {
            key = splitmix64(key ^ w as u64);
        }
        // 28 jitter bits scaled below 1e-3: coarse enough to survive f64
        // granularity at the largest reachable distance (~4 * 255), fine
        // enough that two slots virtually never collide.
        let jitter = (key >> 36) as f64 / f64::from(1u32 << 28) * 1e-3;
        self.distance(spec) as f64 + jitter
    }
}

impl CandidateEvaluator for SurrogateEvaluator {
    type Trained = f64;

    fn train_and_score(&self, spec: &ModelSpec, stream_seed: u64) -> Option<(f64, f64, u64)> {
        let d = self.keyed_distance(spec, stream_seed);
        Some((d, -d, 1_000 + (d * SURROGATE_BYTES_PER_UNIT) as u64))
    }

    fn latency_ms(&self, d: &f64) -> f64 {
        0.5 + 0.01 * d
    }
}

/// Decode and evaluate a single candidate. Diverged candidates come back with
/// zeroed criteria rather than an error so the caller can still log them.
pub fn evaluate_candidate<E: CandidateEvaluator>(
    gene: &Gene,
    family: ModelFamily,
    evaluator: &E,
    stream_seed: u64,
) -> Result<FitnessRecord, GaError> {
    let spec = decode_gene(gene, family)?;
    Ok(match evaluator.train_and_score(&spec, stream_seed) {
        Some((trained, performance, size_bytes)) => FitnessRecord {
            gene: gene.clone(),
            spec,
            performance,
            latency_ms: evaluator.latency_ms(&trained),
            size_bytes,
            diverged: false,
            rank_avg: 0.0,
        },
        None => diverged_record(gene.clone(), spec),
    })
}

fn diverged_record(gene: Gene, spec: ModelSpec) -> FitnessRecord {
    FitnessRecord {
        gene,
        spec,
        performance: 0.0,
        latency_ms: 0.0,
        size_bytes: 0,
        diverged: true,
        rank_avg: 0.0,
    }
}

/// Seeded population of i.i.d. Bernoulli(0.5) bits.
pub fn init_population(config: &GaConfig, family: ModelFamily) -> Result<Vec<Gene>, GaError> {
    config.validate()?;
    let width = gene_width(family)?;
    let mut rng = derive_rng(config.seed, "gaopt/init", &[]);
    Ok((0..config.population_size)
        .map(|_| Gene::from_bits((0..width).map(|_| rng.gen_bool(0.5)).collect()))
        .collect())
}

/// Ascending ranks with tied values sharing the mean of their occupied
/// positions (positions are 1-based).
fn tied_ranks<T: PartialOrd>(values: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("criteria are finite"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Fill `rank_avg` for one generation: rank each criterion independently over
/// the non-diverged records (performance descending, latency and size
/// ascending, rank 1 best), then average the three ranks. Diverged records get
/// `population size + 1`. Errs when every record diverged, after still
/// assigning the penalty ranks so breeding can continue.
pub fn rank_average_fitness(records: &mut [FitnessRecord]) -> Result<(), GaError> {
    let penalty = (records.len() + 1) as f64;
    let live: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.diverged)
        .map(|(i, _)| i)
        .collect();
    for record in records.iter_mut().filter(|r| r.diverged) {
        record.rank_avg = penalty;
    }
    if live.is_empty() {
        return Err(GaError::AllDiverged);
    }
    let perf: Vec<f64> = live.iter().map(|&i| -records[i].performance).collect();
    let latency: Vec<f64> = live.iter().map(|&i| records[i].latency_ms).collect();
    let size: Vec<u64> = live.iter().map(|&i| records[i].size_bytes).collect();
    let (rp, rl, rs) = (tied_ranks(&perf), tied_ranks(&latency), tied_ranks(&size));
    for (k, &i) in live.iter().enumerate() {
        records[i].rank_avg = (rp[k] + rl[k] + rs[k]) / 3.0;
    }
    Ok(())
}

/// Roulette selection under minimization: weight = (max rank_avg - rank_avg)
/// + 1, so every record keeps strictly positive mass. Returns the index of
/// the selected record.
pub fn roulette_select(records: &[FitnessRecord], rng: &mut ChaCha8Rng) -> usize {
    assert!(!records.is_empty(), "selection needs at least one record");
    let max = records
        .iter()
        .map(|r| r.rank_avg)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = records.iter().map(|r| (max - r.rank_avg) + 1.0).collect();
    let total: f64 = weights.iter().sum();
    let draw = rng.gen_range(0.0..total);
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if draw < acc {
            return i;
        }
    }
    records.len() - 1
}

/// Single-point crossover: with probability `crossover_prob` pick a cut
/// uniformly in 1..width and exchange tails; otherwise copy the parents.
pub fn crossover(
    a: &Gene,
    b: &Gene,
    crossover_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Gene, Gene), GaError> {
    if a.width() != b.width() {
        return Err(GaError::WidthMismatch {
            expected: a.width(),
            found: b.width(),
        });
    }
    if a.width() < 2 || !rng.gen_bool(crossover_prob) {
        return Ok((a.clone(), b.clone()));
    }
    let cut = rng.gen_range(1..a.width());
    let child = |head: &Gene, tail: &Gene| {
        Gene::from_bits(
            head.bits()[..cut]
                .iter()
                .chain(&tail.bits()[cut..])
                .copied()
                .collect(),
        )
    };
    Ok((child(a, b), child(b, a)))
}

/// Flip each bit independently with probability `mutation_prob_per_bit`.
pub fn mutate(gene: &Gene, mutation_prob_per_bit: f64, rng: &mut ChaCha8Rng) -> Gene {
    Gene::from_bits(
        gene.bits()
            .iter()
            .map(|&bit| bit != rng.gen_bool(mutation_prob_per_bit))
            .collect(),
    )
}

/// Next generation: elites first (stable order among exact rank ties), then
/// roulette-selected parents bred by crossover and mutation.
fn breed(
    records: &[FitnessRecord],
    config: &GaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Gene>, GaError> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .rank_avg
            .partial_cmp(&records[b].rank_avg)
            .expect("ranks are finite")
    });
    let mut next: Vec<Gene> = order
        .iter()
        .take(config.elite_count)
        .map(|&i| records[i].gene.clone())
        .collect();
    while next.len() < records.len() {
        let a = roulette_select(records, rng);
        let b = roulette_select(records, rng);
        let (c1, c2) = crossover(
            &records[a].gene,
            &records[b].gene,
            config.crossover_prob,
            rng,
        )?;
        next.push(mutate(&c1, config.mutation_prob_per_bit, rng));
        if next.len() < records.len() {
            next.push(mutate(&c2, config.mutation_prob_per_bit, rng));
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    /// Lowest rank_avg ever seen among non-diverged candidates; later
    /// generations win ties so the winner reflects the converged population.
    pub best: FitnessRecord,
    /// One inner vector per generation, one record per slot.
    pub history: Vec<Vec<FitnessRecord>>,
}

/// Run the full search loop. Candidate training runs in parallel within each
/// generation; latency is measured sequentially afterwards so timing never
/// shares a thread. Errs with [`GaError::AllDiverged`] only when no candidate
/// in any generation survived the divergence gate.
pub fn run_ga<E: CandidateEvaluator>(
    family: ModelFamily,
    evaluator: &E,
    config: &GaConfig,
) -> Result<GaOutcome, GaError> {
    config.validate()?;
    let mut population = init_population(config, family)?;
    let mut breed_rng = derive_rng(config.seed, "gaopt/breed", &[]);
    let mut best: Option<FitnessRecord> = None;
    let mut history = Vec::with_capacity(config.generations);
    for generation in 0..config.generations {
        let seeds: Vec<u64> = (0..population.len())
            .map(|index| {
                derive_seed(
                    config.seed,
                    "gaopt/candidate",
                    &[generation as u64, index as u64],
                )
            })
            .collect();
        let outcomes: Vec<(ModelSpec, Option<(E::Trained, f64, u64)>)> = population
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(gene, &stream_seed)| {
                // Bred genes always carry the family width.
                let spec = decode_gene(gene, family).expect("population genes match the family");
                let outcome = evaluator.train_and_score(&spec, stream_seed);
                (spec, outcome)
            })
            .collect();
        let mut records: Vec<FitnessRecord> = population
            .iter()
            .zip(outcomes)
            .map(|(gene, (spec, outcome))| match outcome {
                Some((trained, performance, size_bytes)) => FitnessRecord {
                    gene: gene.clone(),
                    spec,
                    performance,
                    latency_ms: evaluator.latency_ms(&trained),
                    size_bytes,
                    diverged: false,
                    rank_avg: 0.0,
                },
                None => diverged_record(gene.clone(), spec),
            })
            .collect();
        // A fully diverged generation keeps breeding on uniform weights; the
        // search only fails if that happens every round.
        let _ = rank_average_fitness(&mut records);
        for record in records.iter().filter(|r| !r.diverged) {
            if best.as_ref().map_or(true, |b| record.rank_avg <= b.rank_avg) {
                best = Some(record.clone());
            }
        }
        if generation + 1 < config.generations {
            population = breed(&records, config, &mut breed_rng)?;
        }
        history.push(records);
    }
    best.map(|best| GaOutcome { best, history })
        .ok_or(GaError::AllDiverged)
}
