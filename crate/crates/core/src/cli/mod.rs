//! Command-line entry point and report emission.

pub mod matrix;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use matrix::{ExperimentMatrix, MatrixConfig, MatrixRun};
pub use report::{emit_report, ReportBundle, RunResult, COMPARISON_FILE, HEATMAP_DIR, TIMING_FILE};

use crate::cohort::{generate_cohort, load_cohort, save_cohort, Cohort, CohortSpec, GroundTruthSample, GroupLabel, Split};
use crate::error::{format_err, io_err};
use crate::evaluation::{
    classify_downstream, evaluate_predictions, group_difference, write_group_difference, write_heatmaps,
    DownstreamConfig, DownstreamResult, EvalReport,
};
use crate::shape_space::{augment_cohort, AugmentConfig};
use crate::ssm_net::ImageToSsmNet;
use crate::trainer::{predict_samples, train, TrainConfig};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const DOWNSTREAM_FILE: &str = "downstream.json";
/// Best-epoch shape network inside a run directory.
pub const BEST_MODEL: &str = "checkpoints/best/model";

#[derive(Parser, Debug)]
#[command(name = "adassm", version, about = "Adversarial augmentation for image-to-shape-model regression")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort directory.
    Generate {
        /// Cohort spec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one configuration on a cohort.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a cohort with offline KDE-augmented training samples added.
    Augment {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Augmented samples per training sample.
        #[arg(long, default_value_t = 3)]
        factor: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a trained run on a cohort split.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Dense surface points per sample for surface distances.
        #[arg(long, default_value_t = 2000)]
        surface_points: usize,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Group classification and group difference from predicted shapes.
    Downstream {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment matrix and emit the comparison report.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the comparison report from evaluated run directories.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `args` (including the program name) and execute; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate { spec, out, seed } => {
            let mut spec = match spec {
                Some(p) => read_json::<CohortSpec>(&p)?,
                None => CohortSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let cohort = generate_cohort(&spec)?;
            save_cohort(&out, &cohort)?;
            println!("wrote {} samples to {}", cohort.samples.len(), out.display());
        }
        Command::Train { config, cohort, out, seed } => {
            let cfg = load_train_config(&config, seed)?;
            let cohort = load_cohort(&cohort)?;
            let outcome = train(&cfg, &cohort, Some(&out))?;
            let s = &outcome.summary;
            println!(
                "{}: best epoch {} validation RMSE {:.4} ({:.1}s)",
                s.mode, s.best_epoch, s.best_val_rmse, s.timings.total_s
            );
        }
        Command::Augment {
            cohort,
            out,
            factor,
            seed,
        } => {
            let cohort = load_cohort(&cohort)?;
            let cfg = AugmentConfig {
                n_aug_factor: factor,
                seed: seed.unwrap_or(cohort.spec.seed),
                ..AugmentConfig::default()
            };
            let (augmented, aug) = augment_cohort(&cohort, &cfg)?;
            save_cohort(&out, &augmented)?;
            println!(
                "added {} augmented samples ({} PCA modes) to {}",
                aug.samples.len(),
                aug.pca.n_components(),
                out.display()
            );
        }
        Command::Evaluate {
            run,
            cohort,
            split,
            surface_points,
            out,
        } => {
            let cohort = load_cohort(&cohort)?;
            let report = evaluate_run(&run, &cohort, split.into(), surface_points, out.as_deref())?;
            println!(
                "{} samples: mean RMSE {:.4}, mean surface distance {:.4}",
                report.n_samples, report.mean_rmse_eq8, report.mean_surface_distance
            );
        }
        Command::Downstream {
            run,
            cohort,
            folds,
            seed,
            out,
        } => {
            let cohort = load_cohort(&cohort)?;
            let cfg = DownstreamConfig {
                folds,
                seed: seed.unwrap_or(cohort.spec.seed),
                ..DownstreamConfig::default()
            };
            let result = downstream_run(&run, &cohort, &cfg, out.as_deref())?;
            println!("accuracy {:.3} ± {:.3}", result.mean, result.std);
        }
        Command::Matrix {
            config,
            cohort,
            out,
            seed,
        } => {
            let mut cfg = MatrixConfig::load(&config)?;
            if let Some(c) = cohort {
                cfg.cohort = Some(c);
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            cfg.seed = resolve_seed(seed, cfg.seed)?;
            let bundle = run_matrix(&cfg)?;
            println!("report for {} runs in {}", bundle.runs.len(), cfg.out.join("report").display());
        }
        Command::Report { runs, out } => {
            let bundle = emit_report(&runs, &out)?;
            for w in &bundle.warnings {
                eprintln!("warning: {w}");
            }
            println!("report for {} runs in {}", bundle.runs.len(), out.display());
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(format_err(path))
}

/// `--seed` beats `ADASSM_SEED`, which beats the configured seed.
pub fn resolve_seed(flag: Option<u64>, configured: u64) -> Result<u64> {
    let mut cfg = TrainConfig {
        seed: configured,
        ..TrainConfig::default()
    };
    cfg.apply_env()?;
    Ok(flag.unwrap_or(cfg.seed))
}

pub fn load_train_config(path: &Path, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::load(path)?;
    cfg.seed = resolve_seed(seed, cfg.seed)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_best_model(run: &Path) -> Result<ImageToSsmNet<f32>> {
    ImageToSsmNet::load(&run.join(BEST_MODEL))
}

/// Evaluate a run's best model on one split; writes `eval_report.json` and
/// per-sample heatmaps to `out` (default: the run directory).
pub fn evaluate_run(
    run: &Path,
    cohort: &Cohort,
    split: Split,
    surface_points: usize,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let mut model = load_best_model(run)?;
    let samples: Vec<&GroundTruthSample> = cohort.split(split).into_iter().filter(|s| !s.augmented).collect();
    if samples.is_empty() {
        return Err(Error::TooFew {
            what: "samples in the evaluated split",
            needed: 1,
            got: 0,
        });
    }
    let preds = predict_samples(&mut model, &samples)?;
    let (report, surfaces) = evaluate_predictions(&samples, &preds, surface_points)?;
    let out = out.unwrap_or(run);
    report.save(out)?;
    write_heatmaps(&out.join(HEATMAP_DIR), &report, &surfaces)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamReport {
    pub n_samples: usize,
    pub accuracy: DownstreamResult,
    /// Correspondence index with the largest group difference.
    pub max_difference_point: usize,
}

pub fn group_index(g: GroupLabel) -> usize {
    match g {
        GroupLabel::Control => 0,
        GroupLabel::Pathology => 1,
    }
}

/// Classify groups from the run's predicted shapes for every original
/// cohort sample; writes `downstream.json` and `groupdiff.csv`, and fills in
/// the downstream field of an existing `eval_report.json`.
pub fn downstream_run(run: &Path, cohort: &Cohort, cfg: &DownstreamConfig, out: Option<&Path>) -> Result<DownstreamResult> {
    let mut model = load_best_model(run)?;
    let samples: Vec<&GroundTruthSample> = cohort.samples.iter().filter(|s| !s.augmented).collect();
    let preds = predict_samples(&mut model, &samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| group_index(s.group)).collect();
    let accuracy = classify_downstream(&preds, &labels, cfg)?;
    let by_group = |g: usize| preds.iter().zip(&labels).filter(|(_, &l)| l == g).map(|(p, _)| p).collect::<Vec<_>>();
    let gd = group_difference(&by_group(1), &by_group(0))?;
    let out = out.unwrap_or(run);
    write_group_difference(out, &gd)?;
    let report = DownstreamReport {
        n_samples: samples.len(),
        accuracy: accuracy.clone(),
        max_difference_point: gd.argmax(),
    };
    let path = out.join(DOWNSTREAM_FILE);
    let json = serde_json::to_string_pretty(&report).map_err(format_err(&path))?;
    fs::write(&path, json).map_err(io_err(&path))?;
    if let Ok(mut eval) = EvalReport::load(out) {
        eval.downstream = Some(accuracy.clone());
        eval.save(out)?;
    }
    Ok(accuracy)
}

/// Train, evaluate (test split) and report every run of the matrix.
pub fn run_matrix(cfg: &MatrixConfig) -> Result<ReportBundle> {
    let matrix = cfg.experiment()?;
    let cohort = cfg.cohort()?;
    let mut dirs = Vec::new();
    for r in &matrix.runs {
        let dir = cfg.out.join(&r.name);
        log::info!("matrix run {}", r.name);
        train(&r.config, &cohort, Some(&dir))?;
        evaluate_run(&dir, &cohort, Split::Test, cfg.surface_points, None)?;
        dirs.push(dir);
    }
    emit_report(&dirs, &cfg.out.join("report"))
}
