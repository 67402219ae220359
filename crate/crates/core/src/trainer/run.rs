use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adassm_nn::{Param, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use super::step::{train_step_adassm, train_step_gaussian, train_step_noaug, Networks, StepConfig};
use crate::adversary::{DiscriminatorConfig, GeneratorConfig};
use crate::cohort::{Cohort, CorrespondenceSet, GroundTruthSample, Split};
use crate::error::{format_err, io_err};
use crate::evaluation::rmse_eq8;
use crate::losses::LossBreakdown;
use crate::shape_space::{augment_cohort, fit_pca, AugmentConfig};
use crate::ssm_net::{restore, snapshot, volumes_to_tensor, ImageToSsmNet, NetConfig};
use crate::{Error, Result};

pub const RUNLOG_FILE: &str = "runlog.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "train_config.json";

/// Volumes scored per forward pass at validation/inference time.
const INFERENCE_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub losses: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean clean-sample training loss over the epoch's steps.
    pub train_rmse: f64,
    /// Mean validation error (mean of per-axis RMSEs).
    pub val_rmse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Offline augmentation (KDE mode only).
    pub augmentation_s: f64,
    /// Training loop including on-the-fly augmentation and validation.
    pub training_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub timings: Timings,
}

impl RunLog {
    /// Per-step CSV; contains no timings, so identical runs give identical bytes.
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,epoch,tv,gan_d,gan_g,rmse_noisy,rmse_clean,contrastive_b,contrastive_p,total\n");
        for r in &self.steps {
            let l = &r.losses;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.epoch,
                l.tv,
                l.gan_d,
                l.gan_g,
                l.rmse_noisy,
                l.rmse_clean,
                l.contrastive_b,
                l.contrastive_p,
                l.total
            );
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,train_rmse,val_rmse\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_rmse, e.val_rmse);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub seed: u64,
    pub epochs: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    /// Training objective (clean-sample RMSE) averaged over the last epoch.
    pub final_train_rmse: f64,
    /// Mean-of-axes RMSE of the final weights on the original training samples.
    pub final_train_rmse_eq8: f64,
    pub timings: Timings,
}

impl Summary {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(format_err(&path))
    }
}

pub struct TrainOutcome {
    /// Shape network restored to the best validation epoch.
    pub model: ImageToSsmNet<f32>,
    pub runlog: RunLog,
    pub summary: Summary,
}

/// Validation and test samples must never be augmented or trained on.
pub fn audit_hygiene(cohort: &Cohort, trained_ids: &HashSet<String>) -> Result<()> {
    for s in &cohort.samples {
        if s.split != Split::Train && (s.augmented || trained_ids.contains(&s.id)) {
            return Err(Error::Hygiene(format!(
                "{} sample {} {}",
                match s.split {
                    Split::Val => "validation",
                    _ => "test",
                },
                s.id,
                if s.augmented { "is augmented" } else { "was used for training" }
            )));
        }
    }
    Ok(())
}

/// Predict correspondences for each sample with batched forward passes.
pub fn predict_samples(model: &mut ImageToSsmNet<f32>, samples: &[&GroundTruthSample]) -> Result<Vec<CorrespondenceSet>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(INFERENCE_CHUNK) {
        let vols: Vec<_> = chunk.iter().map(|s| &s.volume).collect();
        let pred = model.forward(&volumes_to_tensor(&vols))?;
        for i in 0..chunk.len() {
            let flat: Vec<f64> = pred.correspondences.item(i).iter().map(|&v| v as f64).collect();
            out.push(CorrespondenceSet::from_flat(&flat)?);
        }
    }
    Ok(out)
}

fn mean_eq8(model: &mut ImageToSsmNet<f32>, samples: &[&GroundTruthSample]) -> Result<f64> {
    let preds = predict_samples(model, samples)?;
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        total += rmse_eq8(p, &s.correspondences)?;
    }
    Ok(total / samples.len() as f64)
}

/// Shuffled batches of `batch_size`; a trailing singleton joins the previous batch.
fn make_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

fn param_values(params: &[&Param<f32>]) -> Vec<Tensor<f32>> {
    snapshot(params)
}

fn write_checkpoint(dir: &Path, nets: &Networks<f32>) -> Result<()> {
    nets.model.save(&dir.join("model"))?;
    nets.generator.save(&dir.join("generator"))?;
    nets.discriminator.save(&dir.join("discriminator"))?;
    Ok(())
}

/// Train on the cohort's training split, selecting the epoch with the lowest
/// validation error. Writes logs and checkpoints when `out_dir` is given.
pub fn train(cfg: &TrainConfig, cohort: &Cohort, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    if let Mode::KdeOffline { n_aug_factor } = cfg.mode {
        let aug_start = Instant::now();
        let aug_cfg = AugmentConfig {
            n_aug_factor,
            variance_threshold: cfg.net.variance_threshold,
            seed: cfg.seed,
            ..AugmentConfig::default()
        };
        let (augmented, _) = augment_cohort(cohort, &aug_cfg)?;
        let augmentation_s = aug_start.elapsed().as_secs_f64();
        let mut outcome = train_inner(cfg, &augmented, out_dir)?;
        outcome.runlog.timings.augmentation_s = augmentation_s;
        outcome.runlog.timings.total_s = started.elapsed().as_secs_f64();
        outcome.summary.timings = outcome.runlog.timings.clone();
        if let Some(dir) = out_dir {
            write_summary(dir, &outcome.summary)?;
        }
        return Ok(outcome);
    }
    let mut outcome = train_inner(cfg, cohort, out_dir)?;
    outcome.runlog.timings.total_s = started.elapsed().as_secs_f64();
    outcome.summary.timings = outcome.runlog.timings.clone();
    if let Some(dir) = out_dir {
        write_summary(dir, &outcome.summary)?;
    }
    Ok(outcome)
}

/// Offline KDE augmentation of the training split followed by plain training.
pub fn run_kde_offline(cfg: &TrainConfig, cohort: &Cohort, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    if !matches!(cfg.mode, Mode::KdeOffline { .. }) {
        return Err(Error::Config(format!("run_kde_offline needs kde_offline mode, got {}", cfg.mode.label())));
    }
    train(cfg, cohort, out_dir)
}

fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    let path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(summary).map_err(format_err(&path))?;
    fs::write(&path, json).map_err(io_err(&path))
}

fn train_inner(cfg: &TrainConfig, cohort: &Cohort, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let train_start = Instant::now();
    for w in cfg.unused_setting_warnings() {
        log::warn!("{w}");
    }
    let train_set = cohort.split(Split::Train);
    let val_set = cohort.split(Split::Val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::TooFew {
            what: "samples in the training and validation splits",
            needed: 1,
            got: train_set.len().min(val_set.len()),
        });
    }
    let spec = &cohort.spec;
    let net_cfg = NetConfig {
        input_dims: spec.dims,
        channels: cfg.net.channels.clone(),
        hidden: cfg.net.hidden,
        latent: cfg.net.latent,
        n_points: spec.n_points,
    };
    let gen_cfg = GeneratorConfig {
        input_dims: spec.dims,
        latent: cfg.latent_dim,
        base_channels: cfg.generator_channels,
    };
    let disc_cfg = DiscriminatorConfig::new(spec.dims);
    let mut nets = Networks::<f32>::new(net_cfg, gen_cfg, disc_cfg, cfg.seed, cfg.lr_model, cfg.lr_gen, cfg.lr_disc)?;

    if cfg.net.pca_init {
        let originals: Vec<CorrespondenceSet> = train_set
            .iter()
            .filter(|s| !s.augmented)
            .map(|s| s.correspondences.clone())
            .collect();
        let mut pca = fit_pca(&originals, cfg.net.variance_threshold)?;
        if pca.n_components() > cfg.net.latent {
            log::warn!(
                "keeping {} of {} PCA components to fit the bottleneck",
                cfg.net.latent,
                pca.n_components()
            );
            pca.truncate(cfg.net.latent);
        }
        nets.model.init_decoder_from_pca(&pca)?;
    }

    let step_cfg = StepConfig {
        weights: cfg.weights(),
        noise_scale: cfg.noise_scale,
        lambda_rev: cfg.lambda_rev,
        tv_kind: cfg.tv_kind,
        non_saturating: cfg.non_saturating,
    };
    let targets: Vec<Vec<f64>> = train_set.iter().map(|s| s.correspondences.flatten()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);

    let ckpt_best = out_dir.map(|d| d.join("checkpoints").join("best"));
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        cfg.save(&dir.join(CONFIG_FILE))?;
    }

    let mut log = RunLog::default();
    let mut best: Option<(usize, f64, Vec<Tensor<f32>>)> = None;
    let mut last_good: Option<PathBuf> = None;
    let mut step = 0;
    let mut trained_ids = HashSet::new();
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = make_batches(train_set.len(), cfg.batch_size, &mut rng);
        for batch in &batches {
            let vols: Vec<_> = batch.iter().map(|&i| &train_set[i].volume).collect();
            let x = volumes_to_tensor::<f32>(&vols);
            let y: Vec<&[f64]> = batch.iter().map(|&i| targets[i].as_slice()).collect();
            trained_ids.extend(batch.iter().map(|&i| train_set[i].id.clone()));
            let losses = if batch.len() < 2 {
                train_step_noaug(&mut nets, &x, &y)?
            } else {
                match cfg.mode {
                    Mode::NoAug | Mode::KdeOffline { .. } => train_step_noaug(&mut nets, &x, &y)?,
                    Mode::Gaussian { sigma } => train_step_gaussian(&mut nets, &x, &y, sigma, &step_cfg, &mut rng)?,
                    _ => train_step_adassm(&mut nets, &x, &y, &step_cfg, &mut rng)?,
                }
            };
            if !losses.all_finite() {
                return Err(Error::NonFinite {
                    step,
                    last_good: last_good.clone(),
                });
            }
            epoch_loss += losses.rmse_clean / batches.len() as f64;
            log.steps.push(StepRecord { step, epoch, losses });
            step += 1;
        }
        audit_hygiene(cohort, &trained_ids)?;
        let val_rmse = mean_eq8(&mut nets.model, &val_set)?;
        if !val_rmse.is_finite() {
            return Err(Error::NonFinite {
                step,
                last_good: last_good.clone(),
            });
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_rmse: epoch_loss,
            val_rmse,
        });
        log::info!("epoch {epoch}: train {epoch_loss:.4} val {val_rmse:.4}");
        if best.as_ref().is_none_or(|b| val_rmse < b.1) {
            best = Some((epoch, val_rmse, param_values(&nets.model.parameters())));
            if let Some(dir) = &ckpt_best {
                write_checkpoint(dir, &nets)?;
                last_good = Some(dir.clone());
            }
        }
    }
    if let Some(dir) = out_dir {
        write_checkpoint(&dir.join("checkpoints").join("last"), &nets)?;
    }
    let originals: Vec<&GroundTruthSample> = train_set.iter().copied().filter(|s| !s.augmented).collect();
    let final_train_rmse_eq8 = mean_eq8(&mut nets.model, &originals)?;
    let (best_epoch, best_val_rmse, values) = best.expect("at least one epoch");
    restore(nets.model.parameters_mut(), &values);
    log.timings.training_s = train_start.elapsed().as_secs_f64();
    let summary = Summary {
        mode: cfg.mode.label(),
        seed: cfg.seed,
        epochs: cfg.epochs,
        n_train: train_set.len(),
        n_val: val_set.len(),
        best_epoch,
        best_val_rmse,
        final_train_rmse: log.epochs.last().map_or(f64::NAN, |e| e.train_rmse),
        final_train_rmse_eq8,
        timings: log.timings.clone(),
    };
    if let Some(dir) = out_dir {
        let path = dir.join(RUNLOG_FILE);
        fs::write(&path, log.steps_csv()).map_err(io_err(&path))?;
        let path = dir.join(EPOCHS_FILE);
        fs::write(&path, log.epochs_csv()).map_err(io_err(&path))?;
    }
    Ok(TrainOutcome {
        model: nets.model,
        runlog: log,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_every_index_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(9, 4, &mut rng);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
        assert_eq!(make_batches(1, 4, &mut rng), vec![vec![0]]);
    }
}
