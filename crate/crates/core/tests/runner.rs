use std::path::Path;
use std::sync::OnceLock;

use tabsynth::fixtures::{dependency_fixture, relational_fixture};
use tabsynth::runner::{
    emit_plot, emit_report, load_config, load_reports, render_plot, run_sweep, run_sweep_with, DatasetSpec, Dimension,
    EvalReport, ExperimentConfig, GridPoint, PointStatus, ReportFormat, RelationalSpec, RunnerError, ToolMode,
    CSV_COLUMNS,
};
use tabsynth::Task;
use tempfile::TempDir;

fn point(layers: usize) -> GridPoint {
    GridPoint {
        layers,
        hidden_dim: 16,
        heads: 2,
        train_rows: None,
    }
}

fn fixture_config(dir: &Path, grid: Vec<GridPoint>) -> ExperimentConfig {
    let data = dir.join("fixture.csv");
    if !data.exists() {
        dependency_fixture(100, 3).write_csv(&data).unwrap();
    }
    let mut c = ExperimentConfig::new(
        DatasetSpec {
            path: data,
            target: "label".into(),
            task: Task::Classification,
        },
        grid,
    );
    c.train.epochs = 80;
    c.train.learning_rate = 1e-2;
    c.train.batch_size = 8;
    c.repetitions = 2;
    c.forest.n_trees = 10;
    c.out_dir = dir.join("runs");
    c
}

/// One three-point sweep shared by the export and plot tests.
fn shared_reports() -> &'static [EvalReport] {
    static REPORTS: OnceLock<(TempDir, Vec<EvalReport>)> = OnceLock::new();
    &REPORTS
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let config = fixture_config(dir.path(), vec![point(1), point(2), point(3)]);
            let reports = run_sweep(&config).unwrap();
            (dir, reports)
        })
        .1
}

#[test]
fn sweep_reports_every_point() {
    let reports = shared_reports();
    assert_eq!(reports.len(), 3);
    for (i, r) in reports.iter().enumerate() {
        assert_eq!(r.grid_index, i);
        assert_eq!(r.dataset, "fixture");
        assert_eq!(r.config.n_generated, r.config.n_train);
        assert_eq!(r.config.repetitions, 2);
        assert!(r.exact_params.is_some());
        assert!(r.size_estimate.is_some());
        let runtime = r.runtime.as_ref().expect("runtime recorded");
        assert_eq!(runtime.train.repetitions.len(), 2);
        // a missing sub-result always comes with a reason
        if r.utility.is_none() || r.similarity.is_none() || r.generation.is_none() {
            assert!(!r.failures.is_empty(), "{r:?}");
        }
        if r.status == PointStatus::Completed {
            assert!(r.failures.is_empty());
            assert_eq!(r.generation.as_ref().unwrap().rows_emitted, r.config.n_train);
        }
    }
    assert!(reports.iter().all(EvalReport::is_completed), "{:?}", reports.iter().map(|r| &r.failures).collect::<Vec<_>>());
    let sizes: Vec<u64> = reports.iter().map(|r| r.exact_params.unwrap()).collect();
    assert!(sizes.windows(2).all(|w| w[0] < w[1]), "{sizes:?}");
    let c = reports[0].config.size_constant.as_ref().unwrap();
    assert_eq!(c.source, "calibrated");
    assert_eq!(c.calibrated_from, Some(point(3)));
    assert_eq!(reports[2].size_estimate.unwrap().estimated_params, reports[2].exact_params.unwrap());
}

#[test]
fn rerun_skips_completed_points_and_resumes_interrupted_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let full = fixture_config(dir.path(), vec![point(1), point(2)]);
    let mut partial = full.clone();
    partial.grid.truncate(1);

    let (_, first) = run_sweep_with(&partial, |_, _| {}).unwrap();
    assert_eq!(first.computed.len(), 1);
    let (resumed, progress) = run_sweep_with(&full, |_, _| {}).unwrap();
    assert_eq!(progress.skipped.len(), 1);
    assert_eq!(progress.computed.len(), 1);

    let (again, progress) = run_sweep_with(&full, |_, _| {}).unwrap();
    assert!(progress.computed.is_empty(), "nothing retrained on rerun");
    assert_eq!(progress.skipped.len(), 2);
    assert_eq!(again, resumed);

    // an uninterrupted sweep in a fresh directory gives the same reports
    let other = tempfile::tempdir().unwrap();
    std::fs::copy(dir.path().join("fixture.csv"), other.path().join("fixture.csv")).unwrap();
    let fresh = run_sweep(&fixture_config(other.path(), vec![point(1), point(2)])).unwrap();
    let strip = |rs: &[EvalReport]| rs.iter().map(EvalReport::without_timing).collect::<Vec<_>>();
    assert_eq!(strip(&fresh), strip(&resumed));
    assert_eq!(load_reports(&full.out_dir).unwrap(), resumed);
}

#[test]
fn failing_point_does_not_stop_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = fixture_config(dir.path(), vec![point(1), point(1)]);
    config.repetitions = 1;
    config.grid[0].train_rows = Some(0);
    let reports = run_sweep(&config).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].status, PointStatus::Failed);
    assert_eq!(reports[0].failures[0].stage, "train");
    assert!(reports[0].runtime.is_none());
    assert!(reports[1].exact_params.is_some());
    assert_ne!(reports[0].point_hash, reports[1].point_hash);
}

#[test]
fn csv_and_json_exports() {
    let reports = shared_reports();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = emit_report(reports, ReportFormat::Csv, dir.path()).unwrap();
    let text = std::fs::read_to_string(csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# columns: "));
    assert_eq!(lines[1], CSV_COLUMNS.join(","));
    assert_eq!(lines.len(), 2 + 3);
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(dir.path().join("reports.csv")).unwrap();
    for record in reader.records() {
        assert_eq!(record.unwrap().len(), CSV_COLUMNS.len());
    }

    let json_path = emit_report(reports, ReportFormat::Json, dir.path()).unwrap();
    let parsed: Vec<EvalReport> = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(parsed, reports);
    assert_eq!(load_reports(&json_path).unwrap(), reports);

    assert!(matches!(emit_report(&[], ReportFormat::Json, dir.path()), Err(RunnerError::NoReports)));
}

fn count(svg: &str, needle: &str) -> usize {
    svg.matches(needle).count()
}

#[test]
fn runtime_plot_has_bars_and_log_size_line() {
    let reports = shared_reports();
    let svg = render_plot(reports, Dimension::Runtime).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(count(&svg, r#"class="bar""#), 3);
    assert_eq!(count(&svg, r#"class="size-line""#), 1);
    assert!(svg.contains(r#"class="axis-secondary" data-scale="log""#));
    assert_eq!(count(&svg, r#"class="reference""#), 0);
    assert!(!svg.contains("href"), "no external assets");

    // the size line rises left to right (smaller y is higher)
    let pts = svg.split(r#"class="size-line" points=""#).nth(1).unwrap();
    let pts = pts.split('"').next().unwrap();
    let ys: Vec<f64> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ys.len(), 3);
    assert!(ys.windows(2).all(|w| w[0] > w[1]), "{ys:?}");
}

#[test]
fn similarity_plot_has_one_reference_line() {
    let reports = shared_reports();
    let svg = render_plot(reports, Dimension::Similarity).unwrap();
    assert_eq!(count(&svg, r#"class="reference""#), 1);
    assert!(svg.contains("stroke-dasharray"));
    let utility = render_plot(reports, Dimension::Utility).unwrap();
    assert_eq!(count(&utility, r#"class="reference""#), 0);
}

#[test]
fn single_report_plot_is_well_formed() {
    let one = &shared_reports()[..1];
    for dim in [Dimension::Runtime, Dimension::Utility, Dimension::Similarity] {
        let svg = render_plot(one, dim).unwrap();
        assert!(!svg.contains("NaN") && !svg.contains("inf"), "{svg}");
        assert_eq!(count(&svg, r#"class="size-point""#), 1);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plots/runtime.svg");
    emit_plot(one, Dimension::Runtime, &path).unwrap();
    assert!(path.exists());
}

#[test]
fn mixed_datasets_are_rejected() {
    let mut reports = shared_reports()[..2].to_vec();
    reports[1].dataset = "other".into();
    assert!(matches!(render_plot(&reports, Dimension::Runtime), Err(RunnerError::MixedDatasets(_))));
    assert!(matches!(render_plot(&[], Dimension::Runtime), Err(RunnerError::NoReports)));
}

#[test]
fn relational_sweep_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (parent, child) = relational_fixture(60, 5);
    parent.write_csv(&dir.path().join("parent.csv")).unwrap();
    child.write_csv(&dir.path().join("child.csv")).unwrap();
    let text = r#"{
        "dataset": {"path": "parent.csv", "target": "region", "task": "classification"},
        "tool_mode": "relational",
        "relational": {"child_path": "child.csv", "child_target": "product",
                       "parent_key": "id", "child_foreign_key": "parent_id", "max_children_per_parent": 8},
        "grid": [{"layers": 1, "hidden_dim": 16, "heads": 2}],
        "train": {"epochs": 100, "learning_rate": 0.01, "batch_size": 8},
        "repetitions": 1,
        "forest": {"n_trees": 5}
    }"#;
    let path = dir.path().join("exp.json");
    std::fs::write(&path, text).unwrap();
    let config = load_config(&path).unwrap();
    assert_eq!(config.tool_mode, ToolMode::Relational);
    assert_eq!(
        config.relational,
        Some(RelationalSpec {
            child_path: dir.path().join("child.csv"),
            child_target: "product".into(),
            child_task: Task::Classification,
            parent_key: "id".into(),
            child_foreign_key: "parent_id".into(),
            max_children_per_parent: 8,
        })
    );
    let reports = run_sweep(&config).unwrap();
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    assert_eq!(r.tool_mode, ToolMode::Relational);
    assert!(r.exact_params.is_some(), "{:?}", r.failures);
    assert!(r.config.child_dataset_sha256.is_some());
    assert!(r.child_generation.is_some(), "{:?}", r.failures);
    assert_eq!(r.config.n_train + r.config.n_test, 60);
}
