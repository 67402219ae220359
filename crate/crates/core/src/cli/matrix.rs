use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{generate_cohort, load_cohort, save_cohort, Cohort, CohortSpec};
use crate::error::{format_err, io_err};
use crate::trainer::{Mode, TrainConfig};
use crate::{Error, Result};

/// A named training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRun {
    pub name: String,
    pub config: TrainConfig,
}

/// Experiment matrix file. Without explicit `runs`, the eight standard
/// comparison runs are built from `preset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    /// Existing cohort directory.
    pub cohort: Option<PathBuf>,
    /// Spec for a cohort generated into `<out>/cohort` when `cohort` is unset.
    pub cohort_spec: Option<CohortSpec>,
    pub out: PathBuf,
    pub preset: String,
    /// Overrides the preset's epoch budget.
    pub epochs: Option<usize>,
    pub seed: u64,
    pub surface_points: usize,
    pub runs: Option<Vec<MatrixRun>>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            cohort: None,
            cohort_spec: None,
            out: PathBuf::from("runs"),
            preset: "desk".into(),
            epochs: None,
            seed: 0,
            surface_points: 2000,
            runs: None,
        }
    }
}

impl MatrixConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(format_err(path))
    }

    /// The runs to execute, every one carrying the matrix seed.
    pub fn experiment(&self) -> Result<ExperimentMatrix> {
        let mut m = match &self.runs {
            Some(runs) => ExperimentMatrix { runs: runs.clone() },
            None => ExperimentMatrix::standard(&self.preset)?,
        };
        for r in &mut m.runs {
            r.config.seed = self.seed;
            if let Some(e) = self.epochs {
                r.config.epochs = e;
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// Load the configured cohort, or generate and save it under `out`.
    pub fn cohort(&self) -> Result<Cohort> {
        match (&self.cohort, &self.cohort_spec) {
            (Some(dir), _) => load_cohort(dir),
            (None, spec) => {
                let spec = spec.clone().unwrap_or_default();
                let cohort = generate_cohort(&spec)?;
                save_cohort(&self.out.join("cohort"), &cohort)?;
                Ok(cohort)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentMatrix {
    pub runs: Vec<MatrixRun>,
}

impl ExperimentMatrix {
    /// NoAug, Gaussian (sigma 1 and 10), offline KDE and the four adversarial variants.
    pub fn standard(preset: &str) -> Result<Self> {
        let modes = [
            ("noaug", Mode::NoAug),
            ("gaussian_1", Mode::Gaussian { sigma: 1.0 }),
            ("gaussian_10", Mode::Gaussian { sigma: 10.0 }),
            ("kde", Mode::KdeOffline { n_aug_factor: 3 }),
            ("adassm", Mode::Adassm),
            ("adassm_bc", Mode::AdassmBc),
            ("adassm_pc", Mode::AdassmPc),
            ("adassm_bc_pc", Mode::AdassmBcPc),
        ];
        let runs = modes
            .into_iter()
            .map(|(name, mode)| {
                Ok(MatrixRun {
                    name: name.into(),
                    config: TrainConfig::preset(preset, mode)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { runs })
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.runs {
            if r.name.is_empty() || r.name.contains(['/', '\\']) || r.name == "report" || r.name == "cohort" {
                return Err(Error::Config(format!("invalid run name {:?}", r.name)));
            }
            if !seen.insert(&r.name) {
                return Err(Error::Config(format!("duplicate run name {:?}", r.name)));
            }
            r.config.validate()?;
        }
        Ok(())
    }
}
