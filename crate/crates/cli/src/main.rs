use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tabsynth::dataset::{
    drop_incomplete, encode_categoricals, load_csv, preprocess, shuffle_split, unify_categories, DataTable,
};
use tabsynth::eval::{discriminator_similarity, evaluate_utility_with, UTILITY_SEEDS};
use tabsynth::relational::{generate_relational, preprocess_relational, RelationalModel, RelationalSchema};
use tabsynth::runner::{
    emit_plot, emit_report, load_config, load_reports, run_sweep_with, Dimension, ExperimentConfig, ReportFormat,
    ToolMode,
};
use tabsynth::sampler::SampleConfig;
use tabsynth::synth::Synthesizer;
use tabsynth::Task;

/// Desk-scale transformer tabular data synthesis and its benchmark harness.
#[derive(Parser, Debug)]
#[command(name = "tabsynth", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Overrides every seed in the config (training, sampling, split, evaluation).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where outputs go; overrides the config's `out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one grid point of a config and save the checkpoint.
    Fit {
        config: PathBuf,
        /// Index of the grid point to train.
        #[arg(long, default_value_t = 0)]
        point: usize,
    },
    /// Sample rows from a saved checkpoint directory.
    Sample {
        checkpoint: PathBuf,
        /// Rows to generate (parents for a relational checkpoint).
        #[arg(short = 'n', long)]
        rows: usize,
        /// CSV destination; stdout when neither this nor --out-dir is given.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Compare a synthetic CSV with a real one on utility and similarity.
    Evaluate {
        real: PathBuf,
        synthetic: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, value_enum, default_value_t = TaskArg::Classification)]
        task: TaskArg,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Run every grid point of a config, skipping points already on disk.
    Sweep { config: PathBuf },
    /// Export the reports of a sweep directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
    },
    /// Draw an SVG chart from the reports of a sweep directory.
    Plot {
        dir: PathBuf,
        #[arg(long, value_enum)]
        dimension: DimensionArg,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DimensionArg {
    Runtime,
    Utility,
    Similarity,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Fit { config, point } => fit(g, config, *point),
        Command::Sample {
            checkpoint,
            rows,
            output,
            temperature,
        } => sample(g, checkpoint, *rows, output.as_deref(), *temperature),
        Command::Evaluate {
            real,
            synthetic,
            target,
            task,
            test_fraction,
        } => {
            let task = match task {
                TaskArg::Classification => Task::Classification,
                TaskArg::Regression => Task::Regression,
            };
            evaluate(g, real, synthetic, target, task, *test_fraction)
        }
        Command::Sweep { config } => sweep(g, config),
        Command::Report { dir, format } => {
            let format = match format {
                FormatArg::Json => ReportFormat::Json,
                FormatArg::Csv => ReportFormat::Csv,
            };
            let reports = load_reports(dir)?;
            let path = emit_report(&reports, format, g.out_dir.as_deref().unwrap_or(dir))?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Plot { dir, dimension } => {
            let (dim, name) = match dimension {
                DimensionArg::Runtime => (Dimension::Runtime, "runtime"),
                DimensionArg::Utility => (Dimension::Utility, "utility"),
                DimensionArg::Similarity => (Dimension::Similarity, "similarity"),
            };
            let reports = load_reports(dir)?;
            let path = g.out_dir.as_deref().unwrap_or(dir).join(format!("{name}.svg"));
            emit_plot(&reports, dim, &path)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn config_with_overrides(g: &Global, path: &Path) -> Result<ExperimentConfig> {
    let mut config = load_config(path)?;
    if let Some(seed) = g.seed {
        config.set_all_seeds(seed);
    }
    if let Some(dir) = &g.out_dir {
        config.out_dir = dir.clone();
    }
    Ok(config)
}

fn note(g: &Global, msg: impl AsRef<str>) {
    if !g.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn fit(g: &Global, config_path: &Path, point: usize) -> Result<()> {
    let config = config_with_overrides(g, config_path)?;
    let Some(p) = config.grid.get(point) else {
        bail!("grid has {} points, no index {point}", config.grid.len());
    };
    let ds = &config.dataset;
    let table = load_csv(&ds.path, &ds.target, ds.task)?;
    let dir = config.out_dir.join("checkpoint");
    note(g, format!("training L={} H={} A={} on {}", p.layers, p.hidden_dim, p.heads, ds.path.display()));
    let summary = match (config.tool_mode, &config.relational) {
        (ToolMode::Relational, Some(r)) => {
            let child = load_csv(&r.child_path, &r.child_target, r.child_task)?;
            let parent = encode_categoricals(&drop_incomplete(&table))?;
            let child = encode_categoricals(&drop_incomplete(&child))?;
            let schema = RelationalSchema::new(
                parent.schema.clone(),
                child.schema.clone(),
                &r.parent_key,
                &r.child_foreign_key,
                r.max_children_per_parent,
            )?;
            let (parent, child) = preprocess_relational(&parent, &child, &schema)?;
            let (model, traces) = RelationalModel::fit(&parent, &child, &schema, p.shape(), &config.train)?;
            model.save(&dir)?;
            serde_json::json!({
                "checkpoint": dir,
                "exact_params": model.parent_model.count_params() + model.child_decoder.count_params(),
                "parent_final_loss": traces.parent.epoch_losses.last(),
                "child_final_loss": traces.child.epoch_losses.last(),
            })
        }
        _ => {
            let prepared = preprocess(&table, config.test_fraction, config.seeds.split)?;
            let (synth, trace) = Synthesizer::fit(&prepared.train, p.shape(), &config.train)?;
            synth.save(&dir)?;
            serde_json::json!({
                "checkpoint": dir,
                "exact_params": synth.model.count_params(),
                "final_loss": trace.epoch_losses.last(),
                "train_rows": prepared.train.len(),
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn sample(g: &Global, checkpoint: &Path, rows: usize, output: Option<&Path>, temperature: Option<f64>) -> Result<()> {
    let mut config = SampleConfig::default();
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(t) = temperature {
        config.temperature = t;
    }
    config.validate()?;
    if checkpoint.join("relational.json").is_file() {
        let model = RelationalModel::load(checkpoint)?;
        let out = output.or(g.out_dir.as_deref()).context("relational sampling needs --out-dir")?;
        let sample = generate_relational(&model, rows, &model.children, &config)?;
        sample.write(out, &model.schema)?;
        note(
            g,
            format!(
                "{} parents, {} children, rejection rate {:.3} / {:.3}",
                sample.parent.len(),
                sample.child.len(),
                sample.parent_stats.rejection_rate(),
                sample.child_stats.rejection_rate()
            ),
        );
        println!("{}", out.display());
        return Ok(());
    }
    let synth = Synthesizer::load(checkpoint)?;
    let (table, stats) = synth.sample(rows, &config)?;
    note(g, format!("{} rows, {} attempts, rejection rate {:.3}", stats.rows_emitted, stats.attempts, stats.rejection_rate()));
    let path = output.map(Path::to_path_buf).or_else(|| g.out_dir.as_ref().map(|d| d.join("synthetic.csv")));
    match path {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            table.write_csv(&path)?;
            println!("{}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            table.write_csv_to(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn first_rows(table: &DataTable, n: usize) -> DataTable {
    table.select(&(0..n.min(table.len())).collect::<Vec<_>>())
}

fn evaluate(g: &Global, real: &Path, synth: &Path, target: &str, task: Task, test_fraction: f64) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let real = drop_incomplete(&load_csv(real, target, task)?);
    let synth = drop_incomplete(&load_csv(synth, target, task)?);
    let (real, synth) = unify_categories(&real, &synth)?;
    let real = encode_categoricals(&real)?;
    let synth = encode_categoricals(&synth)?;
    let (train, test) = shuffle_split(&real, test_fraction, seed)?;
    if synth.len() < train.len() {
        bail!("synthetic table has {} rows, the real training split needs {}", synth.len(), train.len());
    }
    let synth = first_rows(&synth, train.len());
    let utility = evaluate_utility_with(&train, &synth, &test, &train.schema, &UTILITY_SEEDS, &Default::default())?;
    let similarity = discriminator_similarity(&train, &synth, seed)?;
    let result = serde_json::json!({ "utility": utility, "similarity": similarity });
    let text = serde_json::to_string_pretty(&result)?;
    if let Some(dir) = &g.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("evaluation.json"), &text)?;
    }
    println!("{text}");
    Ok(())
}

fn sweep(g: &Global, config_path: &Path) -> Result<()> {
    let config = config_with_overrides(g, config_path)?;
    let total = config.grid.len();
    let mut done = 0;
    let (reports, progress) = run_sweep_with(&config, |r, skipped| {
        done += 1;
        let what = if skipped {
            "skipped (already on disk)".to_string()
        } else {
            let secs = r.runtime.as_ref().map(|t| t.total.mean_seconds).unwrap_or(0.0);
            format!("{:?} in {secs:.2}s mean", r.status).to_lowercase()
        };
        note(
            g,
            format!("[{done}/{total}] L={} H={} A={}: {what}", r.point.layers, r.point.hidden_dim, r.point.heads),
        );
    })?;
    let path = emit_report(&reports, ReportFormat::Json, &config.out_dir)?;
    note(g, format!("{} computed, {} skipped", progress.computed.len(), progress.skipped.len()));
    println!("{}", path.display());
    Ok(())
}
