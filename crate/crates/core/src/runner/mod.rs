//! Experiment configuration, the resumable sweep engine, report export and
//! SVG plots.

mod plot;
mod report;
mod sweep;

pub use plot::{emit_plot, render_plot, Dimension};
pub use report::{emit_report, load_reports, ReportFormat, CSV_COLUMNS};
pub use sweep::{
    point_hash, run_sweep, run_sweep_with, ArtifactVersions, ConfigEcho, EvalReport, Failure, PhaseRuntimes, PointStatus,
    SizeConstantEcho, SweepProgress, POINTS_DIR, SWEEP_MANIFEST,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Task;
use crate::ml::ForestConfig;
use crate::sampler::SampleConfig;
use crate::synth::ModelShape;
use crate::train::TrainConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("dataset: {0}")]
    Data(String),
    #[error("no reports to emit")]
    NoReports,
    #[error("reports mix datasets: {0:?}")]
    MixedDatasets(Vec<String>),
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |e| RunnerError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolMode {
    #[default]
    SingleTable,
    Relational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// CSV path, relative to the config file.
    pub path: PathBuf,
    pub target: String,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationalSpec {
    /// Child CSV path, relative to the config file.
    pub child_path: PathBuf,
    pub child_target: String,
    #[serde(default = "defaults::child_task")]
    pub child_task: Task,
    pub parent_key: String,
    pub child_foreign_key: String,
    #[serde(default = "defaults::max_children")]
    pub max_children_per_parent: usize,
}

/// One model configuration of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    /// Keep only the first `n` training rows (all when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_rows: Option<usize>,
}

impl GridPoint {
    pub fn shape(&self) -> ModelShape {
        ModelShape::new(self.layers, self.hidden_dim, self.heads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Train/test split.
    #[serde(default)]
    pub split: u64,
    /// Discriminator sampling and forest.
    #[serde(default)]
    pub evaluation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::schema_version")]
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub tool_mode: ToolMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relational: Option<RelationalSpec>,
    pub grid: Vec<GridPoint>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default = "defaults::repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub forest: ForestConfig,
    /// Size-model constant; calibrated from the largest grid point when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_constant: Option<f64>,
    /// Output directory, relative to the config file.
    #[serde(default = "defaults::out_dir")]
    pub out_dir: PathBuf,
}

mod defaults {
    use std::path::PathBuf;

    use crate::dataset::Task;

    pub fn schema_version() -> u32 {
        super::CONFIG_SCHEMA_VERSION
    }
    pub fn repetitions() -> usize {
        crate::eval::DEFAULT_REPETITIONS
    }
    pub fn test_fraction() -> f64 {
        super::DEFAULT_TEST_FRACTION
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("runs")
    }
    pub fn child_task() -> Task {
        Task::Classification
    }
    pub fn max_children() -> usize {
        16
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> RunnerError {
    RunnerError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Minimal config: one dataset and one grid point, defaults elsewhere.
    pub fn new(dataset: DatasetSpec, grid: Vec<GridPoint>) -> Self {
        serde_json::from_value(serde_json::json!({ "dataset": dataset, "grid": grid })).expect("defaults deserialize")
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {CONFIG_SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.grid.is_empty() {
            return Err(invalid("grid", "must contain at least one point"));
        }
        for (i, p) in self.grid.iter().enumerate() {
            for (name, v) in [("layers", p.layers), ("hidden_dim", p.hidden_dim), ("heads", p.heads)] {
                if v == 0 {
                    return Err(invalid(format!("grid[{i}].{name}"), "must be positive"));
                }
            }
            if p.hidden_dim % p.heads != 0 {
                return Err(invalid(
                    format!("grid[{i}].heads"),
                    format!("hidden_dim {} is not divisible by {} heads", p.hidden_dim, p.heads),
                ));
            }
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid("test_fraction", "must lie strictly between 0 and 1"));
        }
        if let Some(c) = self.size_constant {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid("size_constant", "must be positive"));
            }
        }
        self.train.validate().map_err(|e| invalid("train", e.to_string()))?;
        self.sample.validate().map_err(|e| invalid("sample", e.to_string()))?;
        self.forest.validate().map_err(|e| invalid("forest", e.to_string()))?;
        match (self.tool_mode, &self.relational) {
            (ToolMode::Relational, None) => Err(invalid("relational", "required when tool_mode is relational")),
            (ToolMode::SingleTable, Some(_)) => Err(invalid("relational", "only allowed when tool_mode is relational")),
            _ => Ok(()),
        }
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        fix(&mut self.out_dir);
        if let Some(r) = &mut self.relational {
            fix(&mut r.child_path);
        }
    }

    /// Overrides every seed (train, sample, split, evaluation).
    pub fn set_all_seeds(&mut self, seed: u64) {
        self.train.seed = seed;
        self.sample.seed = seed;
        self.seeds = Seeds {
            split: seed,
            evaluation: seed,
        };
    }
}

/// Parses, fills defaults and validates. Unknown keys are rejected with the
/// closest known key as a suggestion.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, RunnerError> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| RunnerError::Parse(describe(&e)))?;
    config.validate()?;
    Ok(config)
}

/// Reads a config file; relative paths inside it resolve against its directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunnerError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let mut config = parse_config(&text)?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}

fn describe(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    let Some(rest) = msg.strip_prefix("unknown field `") else {
        return msg;
    };
    let Some((unknown, tail)) = rest.split_once('`') else {
        return msg;
    };
    let known: Vec<&str> = tail.split('`').skip(1).step_by(2).collect();
    let best = known
        .iter()
        .map(|k| (strsim::levenshtein(unknown, k), *k))
        .min()
        .filter(|(d, _)| *d <= unknown.len().max(2) / 2 + 1);
    match best {
        Some((_, k)) => format!("{msg}; did you mean `{k}`?"),
        None => msg,
    }
}
