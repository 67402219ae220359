use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::io_err;
use crate::evaluation::EvalReport;
use crate::trainer::Summary;
use crate::Result;

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const RMSE_CHART: &str = "rmse.svg";
pub const SURFACE_CHART: &str = "surface_distance.svg";
/// Per-sample heatmaps live in this subdirectory of a run directory.
pub const HEATMAP_DIR: &str = "heatmaps";

const CHART_HEIGHT: f64 = 240.0;
const BAR_WIDTH: f64 = 18.0;
const GROUP_GAP: f64 = 16.0;
const MARGIN: f64 = 40.0;

/// One run's evaluation results, as gathered from its directory.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub name: String,
    pub eval: EvalReport,
    pub summary: Option<Summary>,
}

#[derive(Clone, Debug, Default)]
pub struct ReportBundle {
    pub runs: Vec<String>,
    pub files: Vec<PathBuf>,
    /// Problems that left the bundle partial (missing reports, heatmaps, ...).
    pub warnings: Vec<String>,
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// `run,mode,mean_rmse,...` table; downstream accuracy is empty when absent.
pub fn comparison_csv(runs: &[RunResult]) -> String {
    let mut s = String::from(
        "run,mode,n_samples,mean_rmse,median_rmse,mean_surface_distance,median_surface_distance,downstream_accuracy\n",
    );
    for r in runs {
        let e = &r.eval;
        let mode = r.summary.as_ref().map_or("", |s| s.mode.as_str());
        let acc = e.downstream.as_ref().map_or(String::new(), |d| d.mean.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.name,
            mode,
            e.n_samples,
            e.mean_rmse_eq8,
            e.median_rmse_eq8,
            e.mean_surface_distance,
            e.median_surface_distance,
            acc
        );
    }
    s
}

/// Offline-augmentation + training versus on-the-fly wall-clock; `total_s`
/// is the exact sum of the two phases.
pub fn timing_csv(runs: &[RunResult]) -> String {
    let mut s = String::from("run,mode,augmentation_s,training_s,total_s\n");
    for r in runs {
        if let Some(sum) = &r.summary {
            let t = &sum.timings;
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.name,
                sum.mode,
                t.augmentation_s,
                t.training_s,
                t.augmentation_s + t.training_s
            );
        }
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart: one group per run, one bar per series. Each bar
/// carries its value in `data-value`; height is `value * scale` pixels.
pub fn bar_chart_svg(title: &str, series: &[&str], groups: &[(String, Vec<f64>)]) -> String {
    let max = groups
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let scale = if max > 0.0 { CHART_HEIGHT / max } else { 1.0 };
    let group_width = BAR_WIDTH * series.len() as f64 + GROUP_GAP;
    let width = 2.0 * MARGIN + group_width * groups.len().max(1) as f64;
    let height = CHART_HEIGHT + 2.0 * MARGIN + 20.0 * series.len() as f64;
    let base = MARGIN + CHART_HEIGHT;
    let palette = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" data-scale="{scale}">"#
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        width - MARGIN
    );
    for (g, (name, values)) in groups.iter().enumerate() {
        let x0 = MARGIN + GROUP_GAP / 2.0 + g as f64 * group_width;
        for (k, &v) in values.iter().enumerate() {
            let h = if v.is_finite() { (v * scale).max(0.0) } else { 0.0 };
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{BAR_WIDTH}" height="{h}" fill="{}" data-run="{}" data-series="{}" data-value="{v}"/>"#,
                x0 + k as f64 * BAR_WIDTH,
                base - h,
                palette[k % palette.len()],
                escape(name),
                escape(series[k]),
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" transform="rotate(30 {} {})">{}</text>"#,
            x0,
            base + 12.0,
            x0,
            base + 12.0,
            escape(name)
        );
    }
    for (k, name) in series.iter().enumerate() {
        let y = base + MARGIN + 20.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}" font-size="11">{}</text>"#,
            y - 9.0,
            palette[k % palette.len()],
            MARGIN + 14.0,
            y,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Gather run directories, skipping (with a warning) any without an
/// evaluation report.
pub fn collect_runs(run_dirs: &[PathBuf], warnings: &mut Vec<String>) -> Vec<(PathBuf, RunResult)> {
    let mut runs = Vec::new();
    for dir in run_dirs {
        let eval = match EvalReport::load(dir) {
            Ok(e) => e,
            Err(e) => {
                warnings.push(format!("skipping {}: {e}", dir.display()));
                continue;
            }
        };
        let summary = match Summary::load(dir) {
            Ok(s) => Some(s),
            Err(e) => {
                warnings.push(format!("{}: no timing summary ({e})", dir.display()));
                None
            }
        };
        runs.push((
            dir.clone(),
            RunResult {
                name: run_name(dir),
                eval,
                summary,
            },
        ));
    }
    runs
}

/// Write the comparison table, charts, best/median/worst heatmaps and the
/// timing table for `run_dirs` into `out`. Output bytes depend only on the
/// run directories' contents.
pub fn emit_report(run_dirs: &[PathBuf], out: &Path) -> Result<ReportBundle> {
    let mut bundle = ReportBundle::default();
    let runs = collect_runs(run_dirs, &mut bundle.warnings);
    fs::create_dir_all(out).map_err(io_err(out))?;
    let results: Vec<RunResult> = runs.iter().map(|(_, r)| r.clone()).collect();
    let write = |name: &str, text: String, bundle: &mut ReportBundle| -> Result<()> {
        let path = out.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        bundle.files.push(path);
        Ok(())
    };
    write(COMPARISON_FILE, comparison_csv(&results), &mut bundle)?;
    write(TIMING_FILE, timing_csv(&results), &mut bundle)?;
    let rmse: Vec<(String, Vec<f64>)> = results
        .iter()
        .map(|r| (r.name.clone(), vec![r.eval.mean_rmse_eq8, r.eval.median_rmse_eq8]))
        .collect();
    write(RMSE_CHART, bar_chart_svg("Correspondence RMSE", &["mean", "median"], &rmse), &mut bundle)?;
    let surface: Vec<(String, Vec<f64>)> = results
        .iter()
        .map(|r| {
            (
                r.name.clone(),
                vec![r.eval.mean_surface_distance, r.eval.median_surface_distance],
            )
        })
        .collect();
    write(
        SURFACE_CHART,
        bar_chart_svg("Surface-to-surface distance", &["mean", "median"], &surface),
        &mut bundle,
    )?;

    let heat_out = out.join(HEATMAP_DIR);
    fs::create_dir_all(&heat_out).map_err(io_err(&heat_out))?;
    for (dir, r) in &runs {
        for (rank, id) in [("best", &r.eval.best), ("median", &r.eval.median), ("worst", &r.eval.worst)] {
            let src = dir.join(HEATMAP_DIR).join(format!("heatmap_{id}.csv"));
            let dst = heat_out.join(format!("{}_{rank}.csv", r.name));
            match fs::copy(&src, &dst) {
                Ok(_) => bundle.files.push(dst),
                Err(e) => bundle.warnings.push(format!("missing heatmap {}: {e}", src.display())),
            }
        }
    }
    bundle.runs = results.into_iter().map(|r| r.name).collect();
    for w in &bundle.warnings {
        log::warn!("{w}");
    }
    Ok(bundle)
}
