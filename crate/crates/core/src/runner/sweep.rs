use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_error, ExperimentConfig, GridPoint, RelationalSpec, RunnerError, Seeds, ToolMode, REPORT_SCHEMA_VERSION};
use crate::dataset::{denormalize_continuous, drop_incomplete, encode_categoricals, parse_csv, preprocess, shuffle_split};
use crate::eval::{
    discriminator_similarity, evaluate_utility_with, time_exclusive, DiscriminatorProtocol, Phase, RuntimeStat,
    SimilarityResult, UtilityResult, UTILITY_SEEDS,
};
use crate::ml::ForestConfig;
use crate::relational::{drop_column, generate_relational, preprocess_relational, RelationalModel, RelationalSchema};
use crate::sampler::{GenerationStats, SampleConfig, SampleError};
use crate::synth::Synthesizer;
use crate::train::TrainConfig;
use crate::transformer::{calibrate_c, estimate_size, SizeEstimate, CHECKPOINT_MAGIC};
use crate::{DataTable, Task, VERSION};

pub const POINTS_DIR: &str = "points";
pub const SWEEP_MANIFEST: &str = "sweep.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Completed,
    /// Training and generation succeeded, some evaluation did not.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRuntimes {
    pub train: RuntimeStat,
    pub generate: RuntimeStat,
    pub total: RuntimeStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeConstantEcho {
    pub value: f64,
    /// `configured`, or `calibrated` from the grid point with the largest `L·H²`.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated_from: Option<GridPoint>,
}

/// Every setting that influenced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub target: String,
    pub task: Task,
    pub dataset_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relational: Option<RelationalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_dataset_sha256: Option<String>,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub repetitions: usize,
    pub seeds: Seeds,
    pub test_fraction: f64,
    pub forest: ForestConfig,
    pub utility_seeds: Vec<u64>,
    pub discriminator: DiscriminatorProtocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_constant: Option<SizeConstantEcho>,
    /// Complete rows before splitting (parents in relational mode).
    pub n_rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Equals `n_train`.
    pub n_generated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactVersions {
    pub crate_version: String,
    pub report_schema: u32,
    pub checkpoint_format: String,
}

impl ArtifactVersions {
    pub fn current() -> Self {
        ArtifactVersions {
            crate_version: VERSION.to_string(),
            report_schema: REPORT_SCHEMA_VERSION,
            checkpoint_format: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        }
    }
}

/// Outcome of one grid point. A missing sub-result always has a matching
/// entry in `failures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub point_hash: String,
    pub grid_index: usize,
    pub dataset: String,
    pub tool_mode: ToolMode,
    pub point: GridPoint,
    pub config: ConfigEcho,
    pub status: PointStatus,
    pub failures: Vec<Failure>,
    pub exact_params: Option<u64>,
    pub size_estimate: Option<SizeEstimate>,
    pub runtime: Option<PhaseRuntimes>,
    pub final_loss: Option<f64>,
    pub generation: Option<GenerationStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_generation: Option<GenerationStats>,
    pub utility: Option<UtilityResult>,
    pub similarity: Option<SimilarityResult>,
    pub versions: ArtifactVersions,
}

impl EvalReport {
    /// The report with wall-clock measurements removed; everything left is
    /// deterministic for a given config.
    pub fn without_timing(&self) -> EvalReport {
        EvalReport {
            runtime: None,
            ..self.clone()
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == PointStatus::Completed
    }
}

/// Hashes of the points that were trained and of those loaded from disk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepProgress {
    pub computed: Vec<String>,
    pub skipped: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Source {
    name: String,
    table: DataTable,
    sha256: String,
    child: Option<(DataTable, String)>,
}

fn read_source(config: &ExperimentConfig) -> Result<Source, RunnerError> {
    let read = |path: &Path| fs::read(path).map_err(io_error(path));
    let parse = |bytes: &[u8], target: &str, task: Task| {
        parse_csv(&String::from_utf8_lossy(bytes), target, task).map_err(|e| RunnerError::Data(e.to_string()))
    };
    let ds = &config.dataset;
    let bytes = read(&ds.path)?;
    let table = parse(&bytes, &ds.target, ds.task)?;
    let child = match (&config.relational, config.tool_mode) {
        (Some(r), ToolMode::Relational) => {
            let cb = read(&r.child_path)?;
            Some((parse(&cb, &r.child_target, r.child_task)?, sha256_hex(&cb)))
        }
        _ => None,
    };
    Ok(Source {
        name: ds
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        table,
        sha256: sha256_hex(&bytes),
        child,
    })
}

/// Content hash of everything that determines a point's non-timing results.
/// Output paths, the grid position and the size constant are excluded.
pub fn point_hash(config: &ExperimentConfig, point: &GridPoint, dataset_sha256: &str, child_sha256: Option<&str>) -> String {
    let relational = config.relational.as_ref().map(|r| {
        serde_json::json!({
            "child_target": r.child_target,
            "child_task": r.child_task,
            "parent_key": r.parent_key,
            "child_foreign_key": r.child_foreign_key,
            "max_children_per_parent": r.max_children_per_parent,
        })
    });
    // serde_json objects are ordered maps, so this rendering is canonical
    let payload = serde_json::json!({
        "crate_version": VERSION,
        "report_schema": REPORT_SCHEMA_VERSION,
        "dataset_sha256": dataset_sha256,
        "child_dataset_sha256": child_sha256,
        "target": config.dataset.target,
        "task": config.dataset.task,
        "tool_mode": config.tool_mode,
        "relational": relational,
        "point": point,
        "train": config.train,
        "sample": config.sample,
        "repetitions": config.repetitions,
        "seeds": config.seeds,
        "test_fraction": config.test_fraction,
        "forest": config.forest,
    });
    sha256_hex(payload.to_string().as_bytes())
}

enum Prepared {
    Single {
        train: DataTable,
        test: DataTable,
    },
    Relational {
        schema: RelationalSchema,
        parent_train: DataTable,
        parent_test: DataTable,
        child: DataTable,
    },
}

impl Prepared {
    fn n_train(&self) -> usize {
        match self {
            Prepared::Single { train, .. } => train.len(),
            Prepared::Relational { parent_train, .. } => parent_train.len(),
        }
    }

    fn n_test(&self) -> usize {
        match self {
            Prepared::Single { test, .. } => test.len(),
            Prepared::Relational { parent_test, .. } => parent_test.len(),
        }
    }
}

fn data_error(e: impl ToString) -> RunnerError {
    RunnerError::Data(e.to_string())
}

fn prepare(config: &ExperimentConfig, source: &Source) -> Result<Prepared, RunnerError> {
    match (&source.child, &config.relational) {
        (Some((child, _)), Some(spec)) => {
            let parent = encode_categoricals(&drop_incomplete(&source.table)).map_err(data_error)?;
            let child = encode_categoricals(&drop_incomplete(child)).map_err(data_error)?;
            let schema = RelationalSchema::new(
                parent.schema.clone(),
                child.schema.clone(),
                &spec.parent_key,
                &spec.child_foreign_key,
                spec.max_children_per_parent,
            )
            .map_err(data_error)?;
            let (parent_train, parent_test) =
                shuffle_split(&parent, config.test_fraction, config.seeds.split).map_err(data_error)?;
            Ok(Prepared::Relational {
                schema,
                parent_train,
                parent_test,
                child,
            })
        }
        _ => {
            let p = preprocess(&source.table, config.test_fraction, config.seeds.split).map_err(data_error)?;
            Ok(Prepared::Single {
                train: p.train,
                test: p.test,
            })
        }
    }
}

fn head(table: &DataTable, n: Option<usize>) -> DataTable {
    match n {
        Some(n) if n < table.len() => table.select(&(0..n).collect::<Vec<_>>()),
        _ => table.clone(),
    }
}

/// What the last repetition produced.
struct Fitted {
    exact_params: u64,
    final_loss: Option<f64>,
    /// Synthetic (parent) table, absent when generation failed.
    synth: Option<DataTable>,
    generation: Option<GenerationStats>,
    child_generation: Option<GenerationStats>,
}

/// Tables the evaluation compares, all in original units.
struct EvalTables {
    real_train: DataTable,
    real_test: DataTable,
}

struct PointRun {
    failures: Vec<Failure>,
    runtime: Option<PhaseRuntimes>,
    fitted: Option<Fitted>,
}

fn fail(stage: &str, reason: impl ToString) -> Failure {
    Failure {
        stage: stage.into(),
        reason: reason.to_string(),
    }
}

fn last_loss(losses: &[f64]) -> Option<f64> {
    losses.last().copied().filter(|v| v.is_finite())
}

type Generated = (DataTable, GenerationStats, Option<GenerationStats>);

/// Trains and generates `repetitions` times, timing each phase. The first
/// failure stops the loop.
fn run_repetitions<M, F, G>(repetitions: usize, mut fit: F, mut generate: G) -> PointRun
where
    F: FnMut() -> Result<(M, u64, Option<f64>), Failure>,
    G: FnMut(&M) -> Result<Generated, (Failure, Option<GenerationStats>)>,
{
    let (mut train_s, mut gen_s) = (Vec::new(), Vec::new());
    let mut fitted = None;
    let mut failures = Vec::new();
    for _ in 0..repetitions {
        let (secs, out) = time_exclusive(&mut fit);
        let (model, exact_params, final_loss) = match out {
            Ok(v) => v,
            Err(f) => {
                failures.push(f);
                break;
            }
        };
        train_s.push(secs);
        let (secs, out) = time_exclusive(|| generate(&model));
        let mut f = Fitted {
            exact_params,
            final_loss,
            synth: None,
            generation: None,
            child_generation: None,
        };
        match out {
            Ok((table, stats, child_stats)) => {
                gen_s.push(secs);
                f.synth = Some(table);
                f.generation = Some(stats);
                f.child_generation = child_stats;
                fitted = Some(f);
            }
            Err((failure, stats)) => {
                failures.push(failure);
                f.generation = stats;
                fitted = Some(f);
                break;
            }
        }
    }
    let runtime = (!train_s.is_empty()).then(|| {
        let train = RuntimeStat::from_samples(Phase::Train, train_s);
        let generate = RuntimeStat::from_samples(Phase::Generate, gen_s);
        let total = RuntimeStat::combined(Phase::Total, &train, &generate);
        PhaseRuntimes { train, generate, total }
    });
    PointRun {
        failures,
        runtime,
        fitted,
    }
}

fn budget_stats(e: &SampleError) -> Option<GenerationStats> {
    match e {
        SampleError::BudgetExhausted { stats, .. } => Some(stats.clone()),
        _ => None,
    }
}

fn run_point(config: &ExperimentConfig, prepared: &Prepared, point: &GridPoint) -> (PointRun, Option<EvalTables>, usize) {
    let shape = point.shape();
    match prepared {
        Prepared::Single { train, test } => {
            let train = head(train, point.train_rows);
            let n = train.len();
            let run = run_repetitions(
                config.repetitions,
                || {
                    let (synth, trace) = Synthesizer::fit(&train, shape, &config.train).map_err(|e| fail("train", e))?;
                    let params = synth.model.count_params();
                    Ok((synth, params, last_loss(&trace.epoch_losses)))
                },
                |synth: &Synthesizer| {
                    synth
                        .sample(n, &config.sample)
                        .map(|(t, s)| (t, s, None))
                        .map_err(|e| (fail("generate", &e), budget_stats(&e)))
                },
            );
            let tables = EvalTables {
                real_train: denormalize_continuous(&train),
                real_test: denormalize_continuous(test),
            };
            (run, Some(tables), n)
        }
        Prepared::Relational {
            schema,
            parent_train,
            parent_test,
            child,
        } => {
            let parents = head(parent_train, point.train_rows);
            let n = parents.len();
            let key = schema.key_index();
            let fk = schema.foreign_key_index();
            let keys: HashSet<u64> = parents
                .rows
                .iter()
                .filter_map(|r| r[key].as_f64())
                .map(f64::to_bits)
                .collect();
            let kept: Vec<usize> = (0..child.len())
                .filter(|&i| child.rows[i][fk].as_f64().is_some_and(|v| keys.contains(&v.to_bits())))
                .collect();
            let children = child.select(&kept);
            let normalized = match preprocess_relational(&parents, &children, schema) {
                Ok(v) => v,
                Err(e) => {
                    let run = PointRun {
                        failures: vec![fail("preprocess", e)],
                        runtime: None,
                        fitted: None,
                    };
                    return (run, None, n);
                }
            };
            let (p_norm, c_norm) = normalized;
            let run = run_repetitions(
                config.repetitions,
                || {
                    let (model, traces) =
                        RelationalModel::fit(&p_norm, &c_norm, schema, shape, &config.train).map_err(|e| fail("train", e))?;
                    let params = model.parent_model.count_params() + model.child_decoder.count_params();
                    let loss = match (last_loss(&traces.parent.epoch_losses), last_loss(&traces.child.epoch_losses)) {
                        (Some(a), Some(b)) => Some((a + b) / 2.0),
                        _ => None,
                    };
                    Ok((model, params, loss))
                },
                |model: &RelationalModel| {
                    generate_relational(model, n, &model.children, &config.sample)
                        .map(|s| (drop_column(&s.parent, key), s.parent_stats, Some(s.child_stats)))
                        .map_err(|e| {
                            let stats = match &e {
                                crate::relational::RelationalError::Parent(s) => budget_stats(s),
                                _ => None,
                            };
                            (fail("generate", e), stats)
                        })
                },
            );
            let tables = EvalTables {
                real_train: denormalize_continuous(&drop_column(&p_norm, key)),
                real_test: drop_column(parent_test, key),
            };
            (run, Some(tables), n)
        }
    }
}

fn evaluate_point(
    config: &ExperimentConfig,
    run: &PointRun,
    tables: Option<&EvalTables>,
) -> (Option<UtilityResult>, Option<SimilarityResult>, Vec<Failure>) {
    let mut failures = Vec::new();
    let (Some(synth), Some(tables)) = (run.fitted.as_ref().and_then(|f| f.synth.as_ref()), tables) else {
        return (None, None, failures);
    };
    let schema = &tables.real_train.schema;
    let utility = evaluate_utility_with(&tables.real_train, synth, &tables.real_test, schema, &UTILITY_SEEDS, &config.forest)
        .map_err(|e| failures.push(fail("utility", e)))
        .ok();
    let similarity = discriminator_similarity(&tables.real_train, synth, config.seeds.evaluation)
        .map_err(|e| failures.push(fail("similarity", e)))
        .ok();
    (utility, similarity, failures)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(io_error(&tmp))?;
    fs::rename(&tmp, path).map_err(io_error(path))
}

fn report_json(report: &EvalReport) -> Vec<u8> {
    serde_json::to_vec_pretty(report).expect("report serializes")
}

fn read_report(path: &Path) -> Result<EvalReport, RunnerError> {
    let bytes = fs::read(path).map_err(io_error(path))?;
    serde_json::from_slice(&bytes).map_err(|e| RunnerError::Parse(format!("{}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
pub(crate) struct Manifest {
    pub schema_version: u32,
    pub points: Vec<String>,
}

/// Runs every grid point not already present under `out_dir/points`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<EvalReport>, RunnerError> {
    run_sweep_with(config, |_, _| {}).map(|(reports, _)| reports)
}

/// As [`run_sweep`], calling `on_point(report, skipped)` after each point.
pub fn run_sweep_with(
    config: &ExperimentConfig,
    mut on_point: impl FnMut(&EvalReport, bool),
) -> Result<(Vec<EvalReport>, SweepProgress), RunnerError> {
    config.validate()?;
    let source = read_source(config)?;
    let child_sha = source.child.as_ref().map(|(_, h)| h.as_str());
    let points_dir = config.out_dir.join(POINTS_DIR);
    fs::create_dir_all(&points_dir).map_err(io_error(&points_dir))?;

    let mut prepared: Option<Prepared> = None;
    let mut reports = Vec::with_capacity(config.grid.len());
    let mut progress = SweepProgress::default();
    for (grid_index, point) in config.grid.iter().enumerate() {
        let hash = point_hash(config, point, &source.sha256, child_sha);
        let path = points_dir.join(format!("{hash}.json"));
        if path.exists() {
            let mut report = read_report(&path)?;
            report.grid_index = grid_index;
            on_point(&report, true);
            progress.skipped.push(hash);
            reports.push(report);
            continue;
        }
        if prepared.is_none() {
            prepared = Some(prepare(config, &source)?);
        }
        let data = prepared.as_ref().expect("prepared above");
        let (run, tables, n_train) = run_point(config, data, point);
        let (utility, similarity, eval_failures) = evaluate_point(config, &run, tables.as_ref());
        let mut failures = run.failures.clone();
        failures.extend(eval_failures);
        let status = match (&run.fitted, run.failures.is_empty(), failures.is_empty()) {
            (Some(_), true, true) => PointStatus::Completed,
            (Some(_), true, false) => PointStatus::Partial,
            _ => PointStatus::Failed,
        };
        let report = EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            point_hash: hash.clone(),
            grid_index,
            dataset: source.name.clone(),
            tool_mode: config.tool_mode,
            point: *point,
            config: ConfigEcho {
                target: config.dataset.target.clone(),
                task: config.dataset.task,
                dataset_sha256: source.sha256.clone(),
                relational: config.relational.clone().map(|mut r| {
                    r.child_path = PathBuf::from(r.child_path.file_name().unwrap_or_default());
                    r
                }),
                child_dataset_sha256: child_sha.map(str::to_string),
                train: config.train,
                sample: config.sample,
                repetitions: config.repetitions,
                seeds: config.seeds,
                test_fraction: config.test_fraction,
                forest: config.forest,
                utility_seeds: UTILITY_SEEDS.to_vec(),
                discriminator: DiscriminatorProtocol::standard(config.seeds.evaluation),
                size_constant: None,
                n_rows: data.n_train() + data.n_test(),
                n_train,
                n_test: data.n_test(),
                n_generated: n_train,
            },
            status,
            failures,
            exact_params: run.fitted.as_ref().map(|f| f.exact_params),
            size_estimate: None,
            runtime: run.runtime,
            final_loss: run.fitted.as_ref().and_then(|f| f.final_loss),
            generation: run.fitted.as_ref().and_then(|f| f.generation.clone()),
            child_generation: run.fitted.as_ref().and_then(|f| f.child_generation.clone()),
            utility,
            similarity,
            versions: ArtifactVersions::current(),
        };
        write_atomic(&path, &report_json(&report))?;
        on_point(&report, false);
        progress.computed.push(hash);
        reports.push(report);
    }

    attach_size_estimates(config, &mut reports);
    for r in &reports {
        write_atomic(&points_dir.join(format!("{}.json", r.point_hash)), &report_json(r))?;
    }
    let manifest = Manifest {
        schema_version: REPORT_SCHEMA_VERSION,
        points: reports.iter().map(|r| r.point_hash.clone()).collect(),
    };
    let manifest_path = config.out_dir.join(SWEEP_MANIFEST);
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
    Ok((reports, progress))
}

/// Fills the size constant and estimates. Without a configured constant it
/// is calibrated from the largest `L·H²` point that reported a parameter count.
fn attach_size_estimates(config: &ExperimentConfig, reports: &mut [EvalReport]) {
    let echo = match config.size_constant {
        Some(value) => Some(SizeConstantEcho {
            value,
            source: "configured".into(),
            calibrated_from: None,
        }),
        None => reports
            .iter()
            .filter_map(|r| r.exact_params.map(|p| (r, p)))
            .max_by_key(|(r, _)| (r.point.layers * r.point.hidden_dim * r.point.hidden_dim, std::cmp::Reverse(r.grid_index)))
            .and_then(|(r, p)| {
                let cal = calibrate_c(p, r.point.layers as u64, r.point.hidden_dim as u64).ok()?;
                Some(SizeConstantEcho {
                    value: cal.raw,
                    source: "calibrated".into(),
                    calibrated_from: Some(r.point),
                })
            }),
    };
    for r in reports.iter_mut() {
        r.size_estimate = echo
            .as_ref()
            .and_then(|e| estimate_size(e.value, r.point.layers as u64, r.point.hidden_dim as u64).ok());
        r.config.size_constant = echo.clone();
    }
}
