use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, EvalReport, RunnerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Runtime,
    Utility,
    Similarity,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 80.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 70.0;
const SERIES_COLORS: [&str; 2] = ["#4c72b0", "#dd8452"];

struct Series {
    name: &'static str,
    values: Vec<Option<f64>>,
}

/// Learner and metric shown in utility plots.
fn utility_metric(r: &EvalReport) -> Option<(&'static str, &'static str)> {
    let u = r.utility.as_ref()?;
    ["accuracy", "r2"].into_iter().find(|m| u.metric("forest", m).is_some()).map(|m| ("forest", m))
}

fn series(reports: &[EvalReport], dim: Dimension) -> (Vec<Series>, String) {
    match dim {
        Dimension::Runtime => (
            vec![Series {
                name: "train + generate",
                values: reports.iter().map(|r| r.runtime.as_ref().map(|t| t.total.mean_seconds)).collect(),
            }],
            "mean runtime (s)".into(),
        ),
        Dimension::Similarity => (
            vec![Series {
                name: "discriminator accuracy",
                values: reports
                    .iter()
                    .map(|r| r.similarity.as_ref().map(|s| s.discriminator_accuracy))
                    .collect(),
            }],
            "discriminator accuracy".into(),
        ),
        Dimension::Utility => {
            let metric = reports.iter().find_map(utility_metric);
            let pick = |arm: fn(crate::eval::MetricPair) -> f64| {
                reports
                    .iter()
                    .map(|r| {
                        let (l, m) = metric?;
                        r.utility.as_ref()?.metric(l, m).map(arm)
                    })
                    .collect()
            };
            let label = metric.map(|(l, m)| format!("{l} {m}")).unwrap_or_else(|| "utility".into());
            (
                vec![
                    Series {
                        name: "real",
                        values: pick(|p| p.real),
                    },
                    Series {
                        name: "synthetic",
                        values: pick(|p| p.synthetic),
                    },
                ],
                label,
            )
        }
    }
}

/// A rounded upper bound for the primary axis, never zero.
fn nice_max(max: f64) -> f64 {
    if !(max > 0.0) || !max.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(max.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|v| *v >= max)
        .unwrap_or(10.0 * mag)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders a self-contained SVG: one bar group per report and the model-size
/// line on a logarithmic secondary axis.
pub fn render_plot(reports: &[EvalReport], dim: Dimension) -> Result<String, RunnerError> {
    let first = reports.first().ok_or(RunnerError::NoReports)?;
    let mut datasets: Vec<String> = reports.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    if datasets.len() > 1 {
        return Err(RunnerError::MixedDatasets(datasets));
    }

    let (series, y_label) = series(reports, dim);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let y_max = match dim {
        Dimension::Similarity => 1.0,
        _ => nice_max(series.iter().flat_map(|s| s.values.iter().flatten()).copied().fold(0.0, f64::max)),
    };
    let y_of = |v: f64| TOP + plot_h * (1.0 - v / y_max);

    let sizes: Vec<Option<f64>> = reports
        .iter()
        .map(|r| {
            r.size_estimate
                .map(|s| s.estimated_params)
                .or(r.exact_params)
                .map(|p| p as f64)
                .filter(|p| *p > 0.0)
        })
        .collect();
    let known: Vec<f64> = sizes.iter().flatten().copied().collect();
    let (lo, hi) = if known.is_empty() {
        (0.0, 1.0)
    } else {
        let lo = known.iter().copied().fold(f64::INFINITY, f64::min).log10().floor();
        let hi = known.iter().copied().fold(0.0, f64::max).log10().ceil();
        // a single decade would put every point on the axis edge
        if hi - lo < 1.0 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    };
    let y_log = |p: f64| TOP + plot_h * (1.0 - (p.log10() - lo) / (hi - lo));

    let slot = plot_w / reports.len() as f64;
    let bar_w = slot / (series.len() as f64 + 1.0);
    let x_center = |i: usize| LEFT + slot * (i as f64 + 0.5);

    let mut s = String::new();
    let title = format!("{} · {}", first.dataset, y_label);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, esc(&title));
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, esc(&title));

    // primary axis
    let _ = writeln!(s, r#"<g class="axis-primary" data-scale="linear">"#);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + plot_h);
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0,
            trim(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + plot_h / 2.0,
        esc(&y_label)
    );
    let _ = writeln!(s, "</g>");

    // secondary axis
    let right = LEFT + plot_w;
    let _ = writeln!(s, r#"<g class="axis-secondary" data-scale="log">"#);
    let _ = writeln!(s, r#"<line x1="{right}" y1="{TOP}" x2="{right}" y2="{}" stroke="black"/>"#, TOP + plot_h);
    for e in (lo as i32)..=(hi as i32) {
        let y = y_log(10f64.powi(e));
        let _ = writeln!(
            s,
            r#"<line x1="{right}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}">1e{e}</text>"#,
            right + 4.0,
            right + 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate({:.2} {:.2}) rotate(90)" text-anchor="middle">parameters (log)</text>"#,
        WIDTH - 12.0,
        TOP + plot_h / 2.0
    );
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{0:.2}" x2="{right}" y2="{0:.2}" stroke="black"/>"#, TOP + plot_h);

    // bars
    for (k, ser) in series.iter().enumerate() {
        for (i, v) in ser.values.iter().enumerate() {
            let Some(v) = v else { continue };
            let x = x_center(i) - slot / 2.0 + bar_w * (k as f64 + 0.5);
            let y = y_of(v.clamp(0.0, y_max));
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-series="{}" data-value="{v}" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"/>"#,
                ser.name,
                TOP + plot_h - y,
                SERIES_COLORS[k % SERIES_COLORS.len()]
            );
        }
    }
    for (i, r) in reports.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="middle">L={} H={} A={}</text>"#,
            x_center(i),
            TOP + plot_h + 18.0,
            r.point.layers,
            r.point.hidden_dim,
            r.point.heads
        );
    }

    if dim == Dimension::Similarity {
        let y = y_of(0.5);
        let _ = writeln!(
            s,
            r#"<line class="reference" x1="{LEFT}" y1="{y:.2}" x2="{right}" y2="{y:.2}" stroke="red" stroke-dasharray="6 4"/>"#
        );
    }

    // size line
    let pts: Vec<String> = sizes
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| format!("{:.2},{:.2}", x_center(i), y_log(p))))
        .collect();
    if !pts.is_empty() {
        let _ = writeln!(
            s,
            r#"<polyline class="size-line" points="{}" fill="none" stroke="black" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle class="size-point" cx="{x}" cy="{y}" r="3"/>"#);
        }
    }

    // legend
    for (k, ser) in series.iter().enumerate() {
        let y = HEIGHT - 20.0;
        let x = LEFT + 150.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{y}">{}</text>"#,
            y - 10.0,
            SERIES_COLORS[k % SERIES_COLORS.len()],
            x + 16.0,
            ser.name
        );
    }
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

fn trim(v: f64) -> String {
    let t = format!("{v:.3}");
    t.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Writes [`render_plot`] output to `path`.
pub fn emit_plot(reports: &[EvalReport], dim: Dimension, path: &Path) -> Result<(), RunnerError> {
    let svg = render_plot(reports, dim)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    fs::write(path, svg).map_err(io_error(path))
}
