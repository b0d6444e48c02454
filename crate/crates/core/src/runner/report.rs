use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::Manifest;
use super::{io_error, EvalReport, RunnerError, POINTS_DIR, SWEEP_MANIFEST};
use crate::eval::MetricPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "reports.json",
            ReportFormat::Csv => "reports.csv",
        }
    }
}

/// (learner, metric) pairs flattened into CSV columns, in column order.
const UTILITY_COLUMNS: [(&str, &str); 6] = [
    ("logistic", "accuracy"),
    ("logistic", "macro_f1"),
    ("forest", "accuracy"),
    ("forest", "macro_f1"),
    ("linear", "r2"),
    ("forest", "r2"),
];

/// CSV columns before the utility block.
const LEAD_COLUMNS: [&str; 18] = [
    "point_hash",
    "grid_index",
    "dataset",
    "tool_mode",
    "layers",
    "hidden_dim",
    "heads",
    "train_rows",
    "status",
    "exact_params",
    "size_constant",
    "estimated_params",
    "train_mean_s",
    "generate_mean_s",
    "total_mean_s",
    "final_loss",
    "rows_generated",
    "rejection_rate",
];

/// CSV columns after the utility block.
const TAIL_COLUMNS: [&str; 3] = ["discriminator_accuracy", "similarity_seed", "failures"];

/// Full CSV column order. Utility metrics appear as
/// `<learner>_<metric>_{real,synthetic,delta}`.
pub static CSV_COLUMNS: std::sync::LazyLock<Vec<String>> = std::sync::LazyLock::new(|| {
    let mut cols: Vec<String> = LEAD_COLUMNS.iter().map(|s| s.to_string()).collect();
    for (learner, metric) in UTILITY_COLUMNS {
        for arm in ["real", "synthetic", "delta"] {
            cols.push(format!("{learner}_{metric}_{arm}"));
        }
    }
    cols.extend(TAIL_COLUMNS.iter().map(|s| s.to_string()));
    cols
});

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_row(r: &EvalReport) -> Vec<String> {
    let runtime = |f: fn(&super::PhaseRuntimes) -> f64| opt(r.runtime.as_ref().map(f));
    let mut row = vec![
        r.point_hash.clone(),
        r.grid_index.to_string(),
        r.dataset.clone(),
        serde_json::to_value(r.tool_mode).expect("enum").as_str().unwrap_or_default().to_string(),
        r.point.layers.to_string(),
        r.point.hidden_dim.to_string(),
        r.point.heads.to_string(),
        opt(r.point.train_rows),
        serde_json::to_value(r.status).expect("enum").as_str().unwrap_or_default().to_string(),
        opt(r.exact_params),
        opt(r.config.size_constant.as_ref().map(|s| s.value)),
        opt(r.size_estimate.map(|s| s.estimated_params)),
        runtime(|p| p.train.mean_seconds),
        runtime(|p| p.generate.mean_seconds),
        runtime(|p| p.total.mean_seconds),
        opt(r.final_loss),
        opt(r.generation.as_ref().map(|g| g.rows_emitted)),
        opt(r.generation.as_ref().map(|g| g.rejection_rate())),
    ];
    for (learner, metric) in UTILITY_COLUMNS {
        let pair: Option<MetricPair> = r.utility.as_ref().and_then(|u| u.metric(learner, metric));
        row.push(opt(pair.map(|p| p.real)));
        row.push(opt(pair.map(|p| p.synthetic)));
        row.push(opt(pair.map(|p| p.delta)));
    }
    row.push(opt(r.similarity.as_ref().map(|s| s.discriminator_accuracy)));
    row.push(opt(r.similarity.as_ref().map(|s| s.seed)));
    row.push(
        r.failures
            .iter()
            .map(|f| format!("{}: {}", f.stage, f.reason))
            .collect::<Vec<_>>()
            .join("; "),
    );
    row
}

fn render_csv(reports: &[EvalReport]) -> Result<Vec<u8>, RunnerError> {
    let mut out = format!("# columns: {}\n", CSV_COLUMNS.join(",")).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let to_err = |e: csv::Error| RunnerError::Parse(e.to_string());
        w.write_record(CSV_COLUMNS.iter()).map_err(to_err)?;
        for r in reports {
            w.write_record(csv_row(r)).map_err(to_err)?;
        }
        w.flush().map_err(|e| RunnerError::Parse(e.to_string()))?;
    }
    Ok(out)
}

/// Writes `reports.json` (an array of reports) or `reports.csv` (one row per
/// report, preceded by a `#` line listing the columns) into `dir`.
pub fn emit_report(reports: &[EvalReport], format: ReportFormat, dir: &Path) -> Result<PathBuf, RunnerError> {
    if reports.is_empty() {
        return Err(RunnerError::NoReports);
    }
    let bytes = match format {
        ReportFormat::Json => serde_json::to_vec_pretty(reports).expect("reports serialize"),
        ReportFormat::Csv => render_csv(reports)?,
    };
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let path = dir.join(format.file_name());
    fs::write(&path, bytes).map_err(io_error(&path))?;
    Ok(path)
}

/// Reads the reports of a sweep directory in manifest order. Without a
/// manifest, every point file is read and ordered by grid index. A
/// `reports.json` file path is also accepted.
pub fn load_reports(path: &Path) -> Result<Vec<EvalReport>, RunnerError> {
    let parse = |p: &Path| -> Result<serde_json::Value, RunnerError> {
        let bytes = fs::read(p).map_err(io_error(p))?;
        serde_json::from_slice(&bytes).map_err(|e| RunnerError::Parse(format!("{}: {e}", p.display())))
    };
    let report = |p: &Path| -> Result<EvalReport, RunnerError> {
        serde_json::from_value(parse(p)?).map_err(|e| RunnerError::Parse(format!("{}: {e}", p.display())))
    };
    if path.is_file() {
        return serde_json::from_value(parse(path)?).map_err(|e| RunnerError::Parse(format!("{}: {e}", path.display())));
    }
    let points = path.join(POINTS_DIR);
    let manifest_path = path.join(SWEEP_MANIFEST);
    if manifest_path.is_file() {
        let manifest: Manifest =
            serde_json::from_value(parse(&manifest_path)?).map_err(|e| RunnerError::Parse(e.to_string()))?;
        return manifest
            .points
            .iter()
            .map(|h| report(&points.join(format!("{h}.json"))))
            .collect();
    }
    let entries = fs::read_dir(&points).map_err(io_error(&points))?;
    let mut reports = Vec::new();
    for entry in entries {
        let p = entry.map_err(io_error(&points))?.path();
        if p.extension().is_some_and(|e| e == "json") {
            reports.push(report(&p)?);
        }
    }
    reports.sort_by_key(|r| r.grid_index);
    Ok(reports)
}
