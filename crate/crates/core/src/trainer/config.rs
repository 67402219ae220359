use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err};
use crate::losses::{LossWeights, TvKind};
use crate::{Error, Result};

/// Augmentation strategy of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    #[serde(rename = "noaug")]
    NoAug,
    Gaussian {
        sigma: f64,
    },
    KdeOffline {
        n_aug_factor: usize,
    },
    Adassm,
    AdassmBc,
    AdassmPc,
    AdassmBcPc,
}

impl Mode {
    pub fn is_adversarial(self) -> bool {
        matches!(self, Mode::Adassm | Mode::AdassmBc | Mode::AdassmPc | Mode::AdassmBcPc)
    }

    pub fn uses_bottleneck_contrastive(self) -> bool {
        matches!(self, Mode::AdassmBc | Mode::AdassmBcPc)
    }

    pub fn uses_point_contrastive(self) -> bool {
        matches!(self, Mode::AdassmPc | Mode::AdassmBcPc)
    }

    pub fn label(self) -> String {
        match self {
            Mode::NoAug => "NoAug".into(),
            Mode::Gaussian { sigma } => format!("Gaussian(sigma={sigma})"),
            Mode::KdeOffline { .. } => "KDE".into(),
            Mode::Adassm => "ADASSM".into(),
            Mode::AdassmBc => "ADASSM+BC".into(),
            Mode::AdassmPc => "ADASSM+PC".into(),
            Mode::AdassmBcPc => "ADASSM+BC+PC".into(),
        }
    }
}

/// Architecture knobs of the shape network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetOptions {
    pub channels: Vec<usize>,
    pub hidden: usize,
    pub latent: usize,
    /// Initialize the decoder from a PCA of the training correspondences.
    pub pca_init: bool,
    pub variance_threshold: f64,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32, 64],
            hidden: 128,
            latent: 32,
            pca_init: true,
            variance_threshold: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_model: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    /// Noise scale `R`.
    pub noise_scale: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_b: f64,
    pub lambda_p: f64,
    pub lambda_rev: f64,
    /// Length of the generator latent `z`.
    pub latent_dim: usize,
    pub generator_channels: usize,
    pub tv_kind: TvKind,
    /// Use `-log D(x_hat)` for the generator instead of `log(1 - D(x_hat))`.
    pub non_saturating: bool,
    pub net: NetOptions,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::NoAug,
            epochs: 100,
            batch_size: 4,
            lr_model: 1e-3,
            lr_gen: 5e-3,
            lr_disc: 5e-3,
            noise_scale: 100.0,
            alpha: 1.0,
            beta: 0.1,
            lambda_b: 0.0,
            lambda_p: 0.0,
            lambda_rev: 1.0,
            latent_dim: 16,
            generator_channels: 4,
            tv_kind: TvKind::L2Norm,
            non_saturating: false,
            net: NetOptions::default(),
            seed: 0,
        }
    }
}

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "ADASSM_SEED";

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(format_err(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(format_err(path))?;
        fs::write(path, json).map_err(io_err(path))
    }

    /// Apply `ADASSM_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            lambda_b: if self.mode.uses_bottleneck_contrastive() { self.lambda_b } else { 0.0 },
            lambda_p: if self.mode.uses_point_contrastive() { self.lambda_p } else { 0.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_model", self.lr_model),
            ("lr_gen", self.lr_gen),
            ("lr_disc", self.lr_disc),
        ];
        for (name, v) in positive {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.mode.is_adversarial() && self.batch_size < 2 {
            return Err(Error::Config("adversarial modes need batch_size >= 2".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) || self.lambda_rev < 0.0 {
            return Err(Error::Config("noise_scale and lambda_rev must be non-negative".into()));
        }
        if let Mode::Gaussian { sigma } = self.mode {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::Config(format!("gaussian sigma must be non-negative, got {sigma}")));
            }
        }
        if let Mode::KdeOffline { n_aug_factor } = self.mode {
            if n_aug_factor == 0 {
                return Err(Error::Config("n_aug_factor must be positive".into()));
            }
        }
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            lambda_b: self.lambda_b,
            lambda_p: self.lambda_p,
        }
        .validate()
    }

    /// Warnings for configured weights the mode ignores.
    pub fn unused_setting_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.lambda_b != 0.0 && !self.mode.uses_bottleneck_contrastive() {
            w.push(format!("lambda_b = {} is ignored in mode {}", self.lambda_b, self.mode.label()));
        }
        if self.lambda_p != 0.0 && !self.mode.uses_point_contrastive() {
            w.push(format!("lambda_p = {} is ignored in mode {}", self.lambda_p, self.mode.label()));
        }
        w
    }

    /// Femur-like settings: `R = 500`, batch 4, 1500 epochs.
    pub fn femur(mode: Mode) -> Self {
        let mut c = Self {
            mode,
            epochs: 1500,
            batch_size: 4,
            lr_model: 5e-5,
            lr_gen: 5e-3,
            lr_disc: 5e-3,
            noise_scale: 500.0,
            alpha: 1.0,
            beta: 0.1,
            ..Self::default()
        };
        match mode {
            Mode::Adassm => c.lr_model = 1e-5,
            Mode::AdassmBc => c.lambda_b = 0.5,
            Mode::AdassmPc => c.lambda_p = 0.1,
            Mode::AdassmBcPc => {
                c.lambda_b = 0.5;
                c.lambda_p = 0.5;
                c.lr_gen = 1e-3;
                c.lr_disc = 1e-3;
            }
            _ => {}
        }
        c
    }

    /// Left-atrium-like settings: `R = 100`, batch 6, 1000 epochs.
    pub fn left_atrium(mode: Mode) -> Self {
        let mut c = Self {
            mode,
            epochs: 1000,
            batch_size: 6,
            lr_model: 1e-4,
            lr_gen: 5e-3,
            lr_disc: 5e-3,
            noise_scale: 100.0,
            alpha: 1.0,
            beta: 0.1,
            ..Self::default()
        };
        match mode {
            Mode::Adassm => c.lr_model = 5e-3,
            Mode::AdassmBc => c.lambda_b = 0.001,
            Mode::AdassmPc => c.lambda_p = 0.05,
            Mode::AdassmBcPc => {
                c.lambda_b = 0.05;
                c.lambda_p = 0.05;
            }
            _ => {}
        }
        c
    }

    /// Settings sized for the 60-sample 48^3 synthetic cohort on one CPU core.
    /// The GAN weight is scaled down: at this size the discriminator spots
    /// any perturbation of the clean volumes, and with `alpha >= 0.01` the
    /// generator answers by shrinking its noise to zero.
    pub fn desk(mode: Mode) -> Self {
        let mut c = Self {
            mode,
            alpha: 1e-3,
            ..Self::default()
        };
        match mode {
            Mode::AdassmBc => c.lambda_b = 0.5,
            Mode::AdassmPc => c.lambda_p = 0.1,
            Mode::AdassmBcPc => {
                c.lambda_b = 0.5;
                c.lambda_p = 0.5;
            }
            _ => {}
        }
        c
    }

    pub fn preset(name: &str, mode: Mode) -> Result<Self> {
        match name {
            "femur" => Ok(Self::femur(mode)),
            "left_atrium" => Ok(Self::left_atrium(mode)),
            "desk" => Ok(Self::desk(mode)),
            other => Err(Error::Config(format!("unknown preset {other:?} (femur, left_atrium, desk)"))),
        }
    }
}
