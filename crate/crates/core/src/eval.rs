//! Runtime measurement, ML utility (real- vs synthetic-trained learners
//! scored on the same real test split) and discriminator similarity.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::format_number;
use crate::dataset::{Cell, ColumnKind, DataTable, TableSchema, Task};
use crate::ml::{
    accuracy, fit_forest, fit_linear, fit_logistic, macro_f1, r_squared, Dataset2D, ForestConfig, MlError, Resampling,
    LOGISTIC_ITERS, LOGISTIC_L2,
};

pub const DEFAULT_REPETITIONS: usize = 5;
/// Learner seeds averaged by the utility evaluation.
pub const UTILITY_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const LINEAR_L2: f64 = 1e-8;
/// Minimum rows per side for the discriminator.
pub const MIN_DISCRIMINATOR_ROWS: usize = 20;
pub const DISCRIMINATOR_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("schemas differ: {0}")]
    SchemaMismatch(String),
    #[error("need at least {needed} rows in {which}, got {got}")]
    TooFewRows {
        which: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("synthetic arm has {synth} rows but real arm has {real}")]
    UnequalArms { real: usize, synth: usize },
    #[error("table has unencoded or missing cells")]
    NotEncoded,
    #[error(transparent)]
    Ml(#[from] MlError),
}

/// Serializes timed workloads within the process.
static TIMING_LOCK: Mutex<()> = Mutex::new(());

/// Runs `f` while holding the timing lock and returns its wall time.
pub fn time_exclusive<T>(f: impl FnOnce() -> T) -> (f64, T) {
    let _guard = TIMING_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let start = Instant::now();
    let out = f();
    (start.elapsed().as_secs_f64(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Generate,
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStat {
    pub phase: Phase,
    /// Seconds per repetition, in run order.
    pub repetitions: Vec<f64>,
    pub mean_seconds: f64,
}

impl RuntimeStat {
    pub fn from_samples(phase: Phase, repetitions: Vec<f64>) -> Self {
        let mean_seconds = if repetitions.is_empty() {
            0.0
        } else {
            repetitions.iter().sum::<f64>() / repetitions.len() as f64
        };
        RuntimeStat {
            phase,
            repetitions,
            mean_seconds,
        }
    }

    /// Element-wise sum of two phases measured over the same repetitions.
    pub fn combined(phase: Phase, a: &RuntimeStat, b: &RuntimeStat) -> Self {
        let reps = a.repetitions.iter().zip(&b.repetitions).map(|(x, y)| x + y).collect();
        RuntimeStat::from_samples(phase, reps)
    }

    pub fn spread(&self) -> f64 {
        let max = self.repetitions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.repetitions.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    }
}

/// A failed workload together with the repetitions completed before it.
#[derive(Debug, Error)]
#[error("repetition {} failed: {source}", .partial.repetitions.len() + 1)]
pub struct MeasureError<E: std::error::Error + 'static> {
    #[source]
    pub source: E,
    pub partial: RuntimeStat,
}

/// Times `repetitions` runs of `workload` (given the repetition index) under
/// the timing lock and returns the stats with the last run's output.
pub fn measure_runtime<T, E, F>(phase: Phase, repetitions: usize, mut workload: F) -> Result<(RuntimeStat, T), MeasureError<E>>
where
    E: std::error::Error + 'static,
    F: FnMut(usize) -> Result<T, E>,
{
    let mut samples = Vec::with_capacity(repetitions);
    let mut last = None;
    for rep in 0..repetitions.max(1) {
        let (secs, out) = time_exclusive(|| workload(rep));
        match out {
            Ok(v) => {
                samples.push(secs);
                last = Some(v);
            }
            Err(source) => {
                return Err(MeasureError {
                    source,
                    partial: RuntimeStat::from_samples(phase, samples),
                })
            }
        }
    }
    Ok((RuntimeStat::from_samples(phase, samples), last.expect("at least one repetition")))
}

/// Turns encoded tables into learner inputs. Categorical columns become
/// one-hot indicators. Continuous columns are standardized and rounded to the
/// codec's printed precision, so real values and values that went through
/// text share one grid. Standardization uses the schema's stored
/// normalization statistics when it has them, otherwise statistics of the
/// given tables pooled in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    schema: TableSchema,
    stats: Vec<(f64, f64)>,
}

impl FeatureEncoder {
    pub fn fit(schema: &TableSchema, tables: &[&DataTable]) -> Result<Self, EvalError> {
        for t in tables {
            check_encoded(t)?;
        }
        let stats = schema
            .columns
            .iter()
            .enumerate()
            .map(|(j, col)| {
                if col.kind == ColumnKind::Categorical {
                    return (0.0, 1.0);
                }
                if col.std_dev > 0.0 || col.zero_variance {
                    return (col.mean, if col.std_dev > 0.0 { col.std_dev } else { 1.0 });
                }
                let mut v: Vec<f64> = tables.iter().flat_map(|t| t.column_values(j)).collect();
                v.sort_by(f64::total_cmp);
                let n = v.len().max(1) as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                (mean, if sd > 0.0 { sd } else { 1.0 })
            })
            .collect();
        Ok(FeatureEncoder {
            schema: schema.clone(),
            stats,
        })
    }

    fn continuous(&self, j: usize, v: f64) -> f64 {
        let (mean, sd) = self.stats[j];
        format_number((v - mean) / sd).parse().expect("formatted number parses")
    }

    /// One feature row per table row, optionally including the target column.
    pub fn features(&self, table: &DataTable, include_target: bool) -> Result<Vec<Vec<f64>>, EvalError> {
        check_encoded(table)?;
        let target = self.schema.target_index();
        Ok(table
            .rows
            .iter()
            .map(|row| {
                let mut out = Vec::new();
                for (j, (cell, col)) in row.iter().zip(&self.schema.columns).enumerate() {
                    if j == target && !include_target {
                        continue;
                    }
                    match cell {
                        Cell::Category(c) => {
                            out.extend((0..col.categories.len()).map(|k| if k == *c { 1.0 } else { 0.0 }))
                        }
                        Cell::Number(v) => out.push(self.continuous(j, *v)),
                        _ => unreachable!("checked encoded"),
                    }
                }
                out
            })
            .collect())
    }

    /// Target values: class index or, for regression, the raw number.
    pub fn labels(&self, table: &DataTable) -> Vec<f64> {
        let target = self.schema.target_index();
        table.rows.iter().map(|r| r[target].as_f64().expect("encoded")).collect()
    }

    pub fn dataset(&self, table: &DataTable) -> Result<Dataset2D, EvalError> {
        Ok(Dataset2D::new(self.features(table, false)?, self.labels(table))?)
    }
}

fn check_encoded(table: &DataTable) -> Result<(), EvalError> {
    let ok = table.rows.iter().all(|r| {
        r.iter()
            .zip(&table.schema.columns)
            .all(|(c, col)| matches!((c, col.kind), (Cell::Category(_), ColumnKind::Categorical) | (Cell::Number(_), ColumnKind::Continuous)))
    });
    if ok {
        Ok(())
    } else {
        Err(EvalError::NotEncoded)
    }
}

fn check_schema(a: &TableSchema, b: &TableSchema, what: &str) -> Result<(), EvalError> {
    let same_categories = a
        .columns
        .iter()
        .zip(&b.columns)
        .all(|(x, y)| x.categories == y.categories);
    if !a.is_compatible(b) || !same_categories {
        return Err(EvalError::SchemaMismatch(what.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub real: f64,
    pub synthetic: f64,
    /// `synthetic - real`.
    pub delta: f64,
}

impl MetricPair {
    fn new(real: f64, synthetic: f64) -> Self {
        MetricPair {
            real,
            synthetic,
            delta: synthetic - real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityResult {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub n_test: usize,
    /// learner name → metric name → scores.
    pub learners: BTreeMap<String, BTreeMap<String, MetricPair>>,
    pub forest: ForestConfig,
}

impl UtilityResult {
    pub fn metric(&self, learner: &str, metric: &str) -> Option<MetricPair> {
        self.learners.get(learner)?.get(metric).copied()
    }
}

type ArmScores = BTreeMap<String, BTreeMap<String, f64>>;

fn score_arm(
    train: &Dataset2D,
    test: &Dataset2D,
    task: Task,
    n_classes: usize,
    seeds: &[u64],
    forest: &ForestConfig,
) -> Result<ArmScores, EvalError> {
    let mut out: ArmScores = BTreeMap::new();
    let n_seeds = seeds.len() as f64;
    match task {
        Task::Classification => {
            let (truth, _) = test.class_labels()?;
            // gradient descent from zero weights does not depend on the seed
            let logistic = fit_logistic(train, LOGISTIC_L2, LOGISTIC_ITERS)?;
            let pred = logistic.predict_all(test.features());
            let entry = out.entry("logistic".into()).or_default();
            entry.insert("accuracy".into(), accuracy(&pred, &truth)?);
            entry.insert("macro_f1".into(), macro_f1(&pred, &truth, n_classes)?);
            let (mut acc, mut f1) = (0.0, 0.0);
            for &seed in seeds {
                let f = fit_forest(train, &ForestConfig { seed, ..*forest }, task)?;
                let pred = f.predict_classes(test.features());
                acc += accuracy(&pred, &truth)?;
                f1 += macro_f1(&pred, &truth, n_classes)?;
            }
            let entry = out.entry("forest".into()).or_default();
            entry.insert("accuracy".into(), acc / n_seeds);
            entry.insert("macro_f1".into(), f1 / n_seeds);
        }
        Task::Regression => {
            let linear = fit_linear(train, LINEAR_L2)?;
            let r2 = r_squared(&linear.predict_all(test.features()), test.labels())?;
            out.entry("linear".into()).or_default().insert("r2".into(), r2);
            let mut total = 0.0;
            for &seed in seeds {
                let f = fit_forest(train, &ForestConfig { seed, ..*forest }, task)?;
                total += r_squared(&f.predict_values(test.features()), test.labels())?;
            }
            out.entry("forest".into()).or_default().insert("r2".into(), total / n_seeds);
        }
    }
    Ok(out)
}

/// Fits the task's baseline learners on each arm and scores both on `real_test`.
pub fn evaluate_utility(
    real_train: &DataTable,
    synth_train: &DataTable,
    real_test: &DataTable,
    schema: &TableSchema,
) -> Result<UtilityResult, EvalError> {
    evaluate_utility_with(real_train, synth_train, real_test, schema, &UTILITY_SEEDS, &ForestConfig::default())
}

pub fn evaluate_utility_with(
    real_train: &DataTable,
    synth_train: &DataTable,
    real_test: &DataTable,
    schema: &TableSchema,
    seeds: &[u64],
    forest: &ForestConfig,
) -> Result<UtilityResult, EvalError> {
    for (t, name) in [(real_train, "real_train"), (synth_train, "synth_train"), (real_test, "real_test")] {
        check_schema(schema, &t.schema, name)?;
    }
    if real_train.len() != synth_train.len() {
        return Err(EvalError::UnequalArms {
            real: real_train.len(),
            synth: synth_train.len(),
        });
    }
    let task = schema.task;
    let n_classes = schema.columns[schema.target_index()].categories.len();
    let encoder = FeatureEncoder::fit(schema, &[real_train])?;
    let test = encoder.dataset(real_test)?;
    let real = score_arm(&encoder.dataset(real_train)?, &test, task, n_classes, seeds, forest)?;
    let synth = score_arm(&encoder.dataset(synth_train)?, &test, task, n_classes, seeds, forest)?;
    let learners = real
        .iter()
        .map(|(learner, metrics)| {
            let pairs = metrics
                .iter()
                .map(|(m, r)| (m.clone(), MetricPair::new(*r, synth[learner][m])))
                .collect();
            (learner.clone(), pairs)
        })
        .collect();
    Ok(UtilityResult {
        task,
        seeds: seeds.to_vec(),
        n_train: real_train.len(),
        n_test: real_test.len(),
        learners,
        forest: *forest,
    })
}

/// Fixed discriminator protocol, echoed in every result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorProtocol {
    /// Larger side downsampled to the smaller side's size.
    pub balancing: String,
    pub train_fraction: f64,
    /// Same permutation applied to both classes.
    pub split: String,
    /// Prediction ties score half a hit.
    pub tie_credit: f64,
    pub forest: ForestConfig,
}

impl DiscriminatorProtocol {
    pub fn standard(seed: u64) -> Self {
        DiscriminatorProtocol {
            balancing: "downsample_larger".into(),
            train_fraction: DISCRIMINATOR_TRAIN_FRACTION,
            split: "stratified_shared_permutation".into(),
            tie_credit: 0.5,
            forest: ForestConfig {
                resampling: Resampling::Balanced,
                seed,
                ..ForestConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResult {
    /// Held-out accuracy; 0.5 means indistinguishable.
    pub discriminator_accuracy: f64,
    pub n_real: usize,
    pub n_synth: usize,
    /// Rows per class after balancing.
    pub n_per_class: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub protocol: DiscriminatorProtocol,
}

/// Random-forest discriminator accuracy on a held-out fold, real labeled 0
/// and synthetic 1. Row selection and splitting do not depend on which side
/// is which, so swapping the tables leaves the accuracy unchanged.
pub fn discriminator_similarity(real: &DataTable, synth: &DataTable, seed: u64) -> Result<SimilarityResult, EvalError> {
    discriminator_similarity_with(real, synth, &DiscriminatorProtocol::standard(seed), seed)
}

pub fn discriminator_similarity_with(
    real: &DataTable,
    synth: &DataTable,
    protocol: &DiscriminatorProtocol,
    seed: u64,
) -> Result<SimilarityResult, EvalError> {
    check_schema(&real.schema, &synth.schema, "real and synthetic tables")?;
    for (t, which) in [(real, "real"), (synth, "synthetic")] {
        if t.len() < MIN_DISCRIMINATOR_ROWS {
            return Err(EvalError::TooFewRows {
                which,
                needed: MIN_DISCRIMINATOR_ROWS,
                got: t.len(),
            });
        }
    }
    let encoder = FeatureEncoder::fit(&real.schema, &[real, synth])?;
    let real_x = encoder.features(real, true)?;
    let synth_x = encoder.features(synth, true)?;
    let m = real.len().min(synth.len());

    // the same draws for each side, so neither side's role matters
    let pick = |n: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, n, m).into_vec()
    };
    let (real_pick, synth_pick) = (pick(real.len()), pick(synth.len()));
    let mut perm: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    perm.shuffle(&mut rng);
    let n_train = ((protocol.train_fraction * m as f64).round() as usize).clamp(1, m - 1);

    let gather = |range: &[usize]| {
        let mut x = Vec::with_capacity(2 * range.len());
        let mut y = Vec::with_capacity(2 * range.len());
        for &k in range {
            x.push(real_x[real_pick[k]].clone());
            y.push(0.0);
        }
        for &k in range {
            x.push(synth_x[synth_pick[k]].clone());
            y.push(1.0);
        }
        (x, y)
    };
    let (train_x, train_y) = gather(&perm[..n_train]);
    let (test_x, test_y) = gather(&perm[n_train..]);
    let forest = fit_forest(
        &Dataset2D::new(train_x, train_y)?,
        &ForestConfig {
            seed,
            ..protocol.forest
        },
        Task::Classification,
    )?;
    let mut credit = 0.0;
    for (x, y) in test_x.iter().zip(&test_y) {
        let p = forest.predict_proba(x);
        credit += if p[0] == p[1] {
            protocol.tie_credit
        } else if (p[1] > p[0]) == (*y == 1.0) {
            1.0
        } else {
            0.0
        };
    }
    Ok(SimilarityResult {
        discriminator_accuracy: credit / test_x.len() as f64,
        n_real: real.len(),
        n_synth: synth.len(),
        n_per_class: m,
        n_train: 2 * n_train,
        n_test: test_x.len(),
        seed,
        protocol: DiscriminatorProtocol {
            forest: ForestConfig {
                seed,
                ..protocol.forest
            },
            ..protocol.clone()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{encode_categoricals, shuffle_split};
    use crate::fixtures::dependency_fixture;
    use std::time::Duration;

    fn encoded(n: usize, seed: u64) -> DataTable {
        encode_categoricals(&dependency_fixture(n, seed)).unwrap()
    }

    #[test]
    fn runtime_single_repetition() {
        let (stat, out) = measure_runtime::<_, std::io::Error, _>(Phase::Train, 1, |_| Ok(7)).unwrap();
        assert_eq!(out, 7);
        assert_eq!(stat.repetitions.len(), 1);
        assert_eq!(stat.mean_seconds, stat.repetitions[0]);
    }

    #[test]
    fn runtime_tracks_sleep() {
        let d = 0.05;
        let (stat, _) = measure_runtime::<_, std::io::Error, _>(Phase::Total, 3, |_| {
            std::thread::sleep(Duration::from_secs_f64(d));
            Ok(())
        })
        .unwrap();
        assert!((stat.mean_seconds - d).abs() <= (0.05 * d).max(0.01), "{stat:?}");
    }

    #[test]
    fn runtime_failure_keeps_partial() {
        let err = measure_runtime(Phase::Generate, 5, |rep| {
            if rep == 2 {
                Err(std::io::Error::other("boom"))
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert_eq!(err.partial.repetitions.len(), 2);
    }

    #[test]
    fn combined_phases_add() {
        let a = RuntimeStat::from_samples(Phase::Train, vec![1.0, 2.0]);
        let b = RuntimeStat::from_samples(Phase::Generate, vec![0.5, 0.5]);
        let t = RuntimeStat::combined(Phase::Total, &a, &b);
        assert_eq!(t.repetitions, vec![1.5, 2.5]);
        assert_eq!(t.mean_seconds, a.mean_seconds + b.mean_seconds);
    }

    #[test]
    fn features_are_one_hot_and_quantized() {
        let t = encoded(50, 0);
        let enc = FeatureEncoder::fit(&t.schema, &[&t]).unwrap();
        let x = enc.features(&t, false).unwrap();
        assert_eq!(x[0].len(), 4 + 4 + 1);
        assert_eq!(x[0][..4].iter().sum::<f64>(), 1.0);
        let with_target = enc.features(&t, true).unwrap();
        assert_eq!(with_target[0].len(), 4 + 4 + 1 + 2);
        let z = x[0][8];
        assert_eq!(z, format_number(z).parse::<f64>().unwrap());
    }

    #[test]
    fn identity_arm_has_zero_deltas() {
        let t = encoded(200, 1);
        let (train, test) = shuffle_split(&t, 0.25, 0).unwrap();
        let forest = ForestConfig {
            n_trees: 10,
            ..ForestConfig::default()
        };
        let u = evaluate_utility_with(&train, &train.clone(), &test, &t.schema, &[0, 1], &forest).unwrap();
        for metrics in u.learners.values() {
            for pair in metrics.values() {
                assert_eq!(pair.delta, 0.0);
            }
        }
        assert!(u.metric("logistic", "accuracy").unwrap().real > 0.8);
    }

    #[test]
    fn unequal_arms_rejected() {
        let t = encoded(100, 2);
        let (train, test) = shuffle_split(&t, 0.2, 0).unwrap();
        let short = train.select(&[0, 1, 2]);
        assert!(matches!(
            evaluate_utility(&train, &short, &test, &t.schema),
            Err(EvalError::UnequalArms { .. })
        ));
    }

    #[test]
    fn too_few_rows_for_discriminator() {
        let t = encoded(100, 3);
        let small = t.select(&(0..10).collect::<Vec<_>>());
        assert!(matches!(
            discriminator_similarity(&t, &small, 0),
            Err(EvalError::TooFewRows { which: "synthetic", .. })
        ));
    }

    #[test]
    fn swap_symmetry() {
        let a = encoded(120, 4);
        let mut b = encoded(90, 5);
        for row in &mut b.rows {
            if let Cell::Number(v) = &mut row[2] {
                *v += 1.0;
            }
        }
        for seed in 0..3 {
            let x = discriminator_similarity(&a, &b, seed).unwrap().discriminator_accuracy;
            let y = discriminator_similarity(&b, &a, seed).unwrap().discriminator_accuracy;
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}
