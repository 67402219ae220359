use crate::cohort::{Cohort, GroundTruthSample, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohort::CorrespondenceSet;
use crate::shape_space::kde::{fit_kde, KdeModel};
use crate::shape_space::pca::{fit_pca, reconstruct_correspondences, PcaModel};
use crate::shape_space::tps::tps_warp_bounded;
use crate::{Error, Result};

const MAX_ATTEMPTS: usize = 1000;

fn max_displacement(a: &CorrespondenceSet, b: &CorrespondenceSet) -> f64 {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Augmented samples generated per training sample.
    pub n_aug_factor: usize,
    pub variance_threshold: f64,
    pub max_displacement_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            n_aug_factor: 3,
            variance_threshold: 0.95,
            max_displacement_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Fitted shape space plus the generated samples.
#[derive(Clone, Debug)]
pub struct Augmentation {
    pub pca: PcaModel,
    pub kde: KdeModel,
    pub samples: Vec<GroundTruthSample>,
}

/// KDE-based offline augmentation: sample PCA scores, reconstruct
/// correspondences, and TPS-warp the training volume nearest in score space.
pub fn kde_augment(train: &[&GroundTruthSample], cfg: &AugmentConfig) -> Result<Augmentation> {
    if train.len() < 2 {
        return Err(Error::TooFew {
            what: "training samples for augmentation",
            needed: 2,
            got: train.len(),
        });
    }
    let corrs: Vec<_> = train.iter().map(|s| s.correspondences.clone()).collect();
    let pca = fit_pca(&corrs, cfg.variance_threshold)?;
    let scores: Vec<Vec<f64>> = corrs.iter().map(|c| pca.project(c)).collect::<Result<_>>()?;
    let kde = fit_kde(scores.clone())?;
    let n = cfg.n_aug_factor * train.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let extent = train[0].volume.extent().into_iter().fold(0.0, f64::max);
    let limit = cfg.max_displacement_fraction * extent;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        // Draws whose landmarks would move further than the warp allows
        // from their nearest training shape are rejected and redrawn.
        let mut attempt = 0;
        let (s, dst, source) = loop {
            let s = kde.draw(&mut rng);
            let dst = reconstruct_correspondences(&pca, &s)?;
            let nearest = scores
                .iter()
                .map(|t| t.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(j, _)| j)
                .expect("non-empty training set");
            let source = train[nearest];
            if max_displacement(&source.correspondences, &dst) <= limit {
                break (s, dst, source);
            }
            attempt += 1;
            if attempt >= MAX_ATTEMPTS {
                return Err(Error::Config(format!(
                    "no KDE draw within the displacement bound after {MAX_ATTEMPTS} attempts"
                )));
            }
        };
        let volume = tps_warp_bounded(&source.volume, &source.correspondences, &dst, cfg.max_displacement_fraction)?;
        samples.push(GroundTruthSample {
            id: format!("aug_{i:04}"),
            params: None,
            volume,
            correspondences: dst,
            group: source.group,
            split: Split::Train,
            augmented: true,
            kde_scores: Some(s),
        });
    }
    Ok(Augmentation { pca, kde, samples })
}

/// Copy of `cohort` with augmented samples appended to the training split.
pub fn augment_cohort(cohort: &Cohort, cfg: &AugmentConfig) -> Result<(Cohort, Augmentation)> {
    let train = cohort.split(Split::Train);
    let aug = kde_augment(&train, cfg)?;
    let mut out = cohort.clone();
    out.samples.extend(aug.samples.iter().cloned());
    Ok((out, aug))
}
