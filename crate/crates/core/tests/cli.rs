use std::fs;
use std::path::Path;
use std::process::Command;

use adassm::cli::MatrixConfig;
use adassm::cohort::{CohortSpec, ShapeDistribution};
use adassm::evaluation::EvalReport;
use adassm::trainer::{Mode, Summary, TrainConfig};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_adassm"));
    c.env_remove("ADASSM_SEED");
    c
}

fn tiny_spec() -> CohortSpec {
    CohortSpec {
        n_samples: 20,
        dims: [16; 3],
        n_points: 16,
        shape: ShapeDistribution::scaled_to(16),
        splits: [0.6, 0.2, 0.2],
        seed: 5,
        ..CohortSpec::default()
    }
}

fn tiny_train(mode: Mode, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk(mode);
    cfg.epochs = epochs;
    cfg.batch_size = 4;
    cfg.net.channels = vec![4, 8];
    cfg.net.hidden = 16;
    cfg.net.latent = 8;
    cfg.generator_channels = 2;
    cfg
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn code(c: &mut Command) -> i32 {
    let out = c.output().unwrap();
    let code = out.status.code().unwrap();
    if code == 2 {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    code
}

#[test]
fn usage_errors_exit_one_and_runtime_errors_exit_two() {
    assert_eq!(code(bin().arg("bogus")), 1);
    assert_eq!(code(bin().args(["train", "--cohort", "c", "--out", "o"])), 1, "--config is required");
    assert_eq!(code(bin().args(["generate", "--out", "x", "--frobnicate"])), 1);
    assert_eq!(code(bin().arg("--help")), 0);
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("missing.json");
    let status = bin()
        .args(["train", "--config"])
        .arg(&missing)
        .args(["--cohort", "c", "--out", "o"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("missing.json"));
}

#[test]
fn generate_train_evaluate_downstream_report() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    write_json(&root.join("spec.json"), &tiny_spec());
    write_json(&root.join("noaug.json"), &tiny_train(Mode::NoAug, 2));
    let cohort = root.join("cohort");
    let run = root.join("runs/noaug");

    assert_eq!(
        code(bin().arg("generate").arg("--spec").arg(root.join("spec.json")).arg("--out").arg(&cohort)),
        0
    );
    assert!(cohort.join("manifest.json").exists());

    let train = |seed: Option<&str>, env: Option<&str>, out: &Path| {
        let mut c = bin();
        c.arg("train")
            .arg("--config")
            .arg(root.join("noaug.json"))
            .arg("--cohort")
            .arg(&cohort)
            .arg("--out")
            .arg(out);
        if let Some(s) = seed {
            c.args(["--seed", s]);
        }
        if let Some(e) = env {
            c.env("ADASSM_SEED", e);
        }
        code(&mut c)
    };
    assert_eq!(train(None, None, &run), 0);
    let summary = Summary::load(&run).unwrap();
    assert!(summary.best_val_rmse.is_finite());
    assert_eq!(summary.seed, 0);
    assert!(run.join("runlog.csv").exists() && run.join("checkpoints/best/model").exists());

    // --seed beats ADASSM_SEED, which beats the config
    let env_run = root.join("runs/env");
    assert_eq!(train(None, Some("9"), &env_run), 0);
    assert_eq!(Summary::load(&env_run).unwrap().seed, 9);
    let flag_run = root.join("runs/flag");
    assert_eq!(train(Some("4"), Some("9"), &flag_run), 0);
    assert_eq!(Summary::load(&flag_run).unwrap().seed, 4);

    assert_eq!(
        code(bin().arg("evaluate").arg("--run").arg(&run).arg("--cohort").arg(&cohort).args(["--surface-points", "200"])),
        0
    );
    let eval = EvalReport::load(&run).unwrap();
    assert_eq!(eval.n_samples, 4);
    assert!(run.join("heatmaps").join(format!("heatmap_{}.csv", eval.worst)).exists());

    assert_eq!(
        code(bin().arg("downstream").arg("--run").arg(&run).arg("--cohort").arg(&cohort).args(["--folds", "2"])),
        0
    );
    assert!(run.join("groupdiff.csv").exists());
    assert!(EvalReport::load(&run).unwrap().downstream.is_some());

    let report = root.join("report");
    assert_eq!(code(bin().arg("report").arg("--runs").arg(&run).arg(root.join("nowhere")).arg("--out").arg(&report)), 0);
    let csv = fs::read_to_string(report.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "missing run skipped with a warning");
    assert!(report.join("heatmaps/noaug_best.csv").exists());

    let aug = root.join("augmented");
    assert_eq!(
        code(bin().arg("augment").arg("--cohort").arg(&cohort).arg("--out").arg(&aug).args(["--factor", "2"])),
        0
    );
    let augmented = adassm::cohort::load_cohort(&aug).unwrap();
    assert_eq!(augmented.samples.len(), 20 + 2 * 12);
}

#[test]
fn matrix_runs_all_eight_configurations() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("matrix");
    let runs = adassm::cli::ExperimentMatrix::standard("desk")
        .unwrap()
        .runs
        .into_iter()
        .map(|mut r| {
            let base = tiny_train(r.config.mode, 1);
            r.config = TrainConfig { mode: r.config.mode, ..base };
            r
        })
        .collect();
    let cfg = MatrixConfig {
        cohort_spec: Some(tiny_spec()),
        out: out.clone(),
        surface_points: 100,
        runs: Some(runs),
        ..MatrixConfig::default()
    };
    let path = tmp.path().join("matrix.json");
    write_json(&path, &cfg);
    assert_eq!(code(bin().arg("matrix").arg("--config").arg(&path)), 0);
    let run_dirs = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("summary.json").exists())
        .count();
    assert_eq!(run_dirs, 8);
    let timing = fs::read_to_string(out.join("report/timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 9);
    let kde = timing.lines().find(|l| l.starts_with("kde,")).unwrap();
    let cols: Vec<f64> = kde.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert!(cols[0] > 0.0);
    assert_eq!(cols[2], cols[0] + cols[1]);
}
