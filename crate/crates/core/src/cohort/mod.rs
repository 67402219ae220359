//! Synthetic volumetric cohorts with analytically known correspondences.

pub mod harmonics;
mod io;
pub mod shape;
pub mod volume;

pub use io::{load_cohort, read_particles, read_volume, save_cohort, write_particles, write_volume, Manifest, SampleRecord};
pub use shape::{generate_shape, CorrespondenceSet, GroupLabel, PathologyRule, Pose, ShapeParams};
pub use volume::{apply_texture, voxelize, TextureConfig, Volume};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Distribution the per-sample shape parameters are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeDistribution {
    pub radii_mean: [f64; 3],
    /// Relative uniform jitter of each radius.
    pub radii_jitter: f64,
    /// Standard deviation of every non-pathology coefficient.
    pub coeff_std: f64,
    pub pathology: PathologyRule,
    /// Probability a sample is drawn from the pathology mode.
    pub pathology_fraction: f64,
    /// Mean of the pathology coefficient is `threshold +/- separation`; the
    /// default keeps the groups separable in raw correspondence PCA scores
    /// despite pose and radius nuisance variation.
    pub pathology_separation: f64,
    pub pathology_std: f64,
    /// Uniform Euler-angle jitter, radians.
    pub rotation_jitter: f64,
    /// Uniform centre jitter around the grid centre, voxels.
    pub translation_jitter: f64,
}

impl Default for ShapeDistribution {
    fn default() -> Self {
        Self {
            radii_mean: [14.0, 11.0, 9.0],
            radii_jitter: 0.12,
            coeff_std: 0.05,
            pathology: PathologyRule {
                coefficient: harmonics::basis_index(2, 0).expect("Y20 in basis"),
                threshold: 0.0,
            },
            pathology_fraction: 0.5,
            pathology_separation: 0.3,
            pathology_std: 0.04,
            rotation_jitter: 0.1,
            translation_jitter: 1.5,
        }
    }
}

impl ShapeDistribution {
    /// Defaults with lengths rescaled from a 48-voxel grid to `grid` voxels.
    pub fn scaled_to(grid: usize) -> Self {
        let d = Self::default();
        let f = grid as f64 / 48.0;
        Self {
            radii_mean: d.radii_mean.map(|r| r * f),
            translation_jitter: d.translation_jitter * f,
            ..d
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_samples: usize,
    pub dims: [usize; 3],
    pub spacing: f64,
    pub n_points: usize,
    pub texture: TextureConfig,
    pub shape: ShapeDistribution,
    /// Train / validation / test fractions.
    pub splits: [f64; 3],
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_samples: 60,
            dims: [48; 3],
            spacing: 1.0,
            n_points: 128,
            texture: TextureConfig::default(),
            shape: ShapeDistribution::default(),
            splits: [0.6, 0.2, 0.2],
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 8 {
            return Err(Error::Config(format!("n_samples must be >= 8, got {}", self.n_samples)));
        }
        if self.n_points < 16 {
            return Err(Error::Config(format!("n_points must be >= 16, got {}", self.n_points)));
        }
        if self.splits.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.splits.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {:?} must be in [0, 1] and sum to 1", self.splits)));
        }
        if !(self.spacing > 0.0) || self.dims.iter().any(|&d| d < 8) {
            return Err(Error::Config("grid dims must be >= 8 and spacing > 0".into()));
        }
        self.texture.validate()
    }

    /// Sample counts per split: train and validation rounded, test gets the rest.
    pub fn split_counts(&self) -> [usize; 3] {
        let n = self.n_samples as f64;
        let train = (n * self.splits[0]).round() as usize;
        let val = ((n * self.splits[1]).round() as usize).min(self.n_samples - train);
        [train, val, self.n_samples - train - val]
    }

    pub fn grid_center(&self) -> [f64; 3] {
        self.dims.map(|d| (d - 1) as f64 * self.spacing / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthSample {
    pub id: String,
    /// Generating parameters; `None` for augmented samples.
    pub params: Option<ShapeParams>,
    pub volume: Volume,
    pub correspondences: CorrespondenceSet,
    pub group: GroupLabel,
    pub split: Split,
    pub augmented: bool,
    /// PCA scores an augmented sample was reconstructed from.
    pub kde_scores: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub spec: CohortSpec,
    pub samples: Vec<GroundTruthSample>,
}

impl Cohort {
    pub fn split(&self, split: Split) -> Vec<&GroundTruthSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&GroundTruthSample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw valid shape parameters for sample `index`; a pure function of
/// `(spec, index)`. Invalid or out-of-grid draws are redrawn within the
/// sample's group.
pub fn draw_params(spec: &CohortSpec, index: usize) -> Result<ShapeParams> {
    let d = &spec.shape;
    let mut rng = sample_rng(spec.seed, index as u64);
    let coeff = Normal::new(0.0, d.coeff_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let path = Normal::new(0.0, d.pathology_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let center = spec.grid_center();
    let r_bound_ok = |p: &ShapeParams| {
        let r = p.max_radius();
        let c = p.pose.translation;
        let extent = spec.dims.map(|n| (n - 1) as f64 * spec.spacing);
        (0..3).all(|k| c[k] - r >= 2.0 * spec.spacing && c[k] + r <= extent[k] - 2.0 * spec.spacing)
    };
    // the group is drawn once so rejections cannot skew the group fraction
    let sick = rng.gen_bool(d.pathology_fraction.clamp(0.0, 1.0));
    for _ in 0..1000 {
        let radii = [0, 1, 2].map(|k| d.radii_mean[k] * (1.0 + rng.gen_range(-1.0..=1.0) * d.radii_jitter));
        let mut coeffs: Vec<f64> = (0..harmonics::basis_len()).map(|_| coeff.sample(&mut rng)).collect();
        let mode = if sick {
            d.pathology.threshold + d.pathology_separation
        } else {
            d.pathology.threshold - d.pathology_separation
        };
        if let Some(c) = coeffs.get_mut(d.pathology.coefficient) {
            *c = mode + path.sample(&mut rng);
        }
        let rotation = [0, 1, 2].map(|_| rng.gen_range(-1.0..=1.0) * d.rotation_jitter);
        let translation = [0, 1, 2].map(|k| center[k] + rng.gen_range(-1.0..=1.0) * d.translation_jitter * spec.spacing);
        let params = ShapeParams {
            radii,
            group_label: d.pathology.label(&coeffs),
            bump_coeffs: coeffs,
            pose: Pose { rotation, translation },
        };
        if params.validate().is_ok() && r_bound_ok(&params) {
            return Ok(params);
        }
    }
    Err(Error::Config(format!(
        "could not draw a valid shape for sample {index} in 1000 attempts; shrink radii or coefficient spread"
    )))
}

pub fn sample_id(index: usize) -> String {
    format!("{index:04}")
}

/// Build one ground-truth sample (split assigned by the caller).
pub fn generate_sample(spec: &CohortSpec, index: usize, split: Split) -> Result<GroundTruthSample> {
    let params = draw_params(spec, index)?;
    let correspondences = generate_shape(&params, spec.n_points)?;
    let occupancy = voxelize(&params, spec.dims, spec.spacing)?;
    let texture_seed = sample_rng(spec.seed, index as u64 | (1 << 62)).gen::<u64>();
    let (volume, _) = apply_texture(&occupancy, &spec.texture, texture_seed)?;
    Ok(GroundTruthSample {
        id: sample_id(index),
        group: params.group_label,
        params: Some(params),
        volume,
        correspondences,
        split,
        augmented: false,
        kde_scores: None,
    })
}

/// Deterministic split assignment by a seeded permutation.
pub fn assign_splits(spec: &CohortSpec) -> Vec<Split> {
    let [train, val, _] = spec.split_counts();
    let mut order: Vec<usize> = (0..spec.n_samples).collect();
    order.shuffle(&mut sample_rng(spec.seed, u64::MAX));
    let mut splits = vec![Split::Test; spec.n_samples];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Generate the whole cohort in memory.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let splits = assign_splits(spec);
    let samples = splits
        .iter()
        .enumerate()
        .map(|(i, &s)| generate_sample(spec, i, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cohort {
        spec: spec.clone(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n: usize) -> CohortSpec {
        CohortSpec {
            n_samples: n,
            dims: [24; 3],
            n_points: 32,
            splits: [0.6, 0.2, 0.2],
            shape: ShapeDistribution {
                radii_mean: [7.0, 6.0, 5.0],
                translation_jitter: 0.5,
                ..ShapeDistribution::default()
            },
            texture: TextureConfig {
                blob_sigma: 1.5,
                ..TextureConfig::default()
            },
            seed: 11,
            ..CohortSpec::default()
        }
    }

    #[test]
    fn split_counts_follow_fractions() {
        assert_eq!(small_spec(10).split_counts(), [6, 2, 2]);
        let c = generate_cohort(&small_spec(10)).unwrap();
        assert_eq!(c.split(Split::Train).len(), 6);
        assert_eq!(c.split(Split::Val).len(), 2);
        assert_eq!(c.split(Split::Test).len(), 2);
    }

    #[test]
    fn labels_follow_pathology_rule() {
        let spec = small_spec(12);
        let c = generate_cohort(&spec).unwrap();
        for s in &c.samples {
            let p = s.params.as_ref().unwrap();
            assert_eq!(s.group, spec.shape.pathology.label(&p.bump_coeffs));
        }
        assert!(c.samples.iter().any(|s| s.group == GroupLabel::Pathology));
        assert!(c.samples.iter().any(|s| s.group == GroupLabel::Control));
    }

    #[test]
    fn rejections_do_not_skew_the_group_fraction() {
        // a tight grid rejects elongated (pathology) draws far more often
        let spec = CohortSpec {
            n_samples: 400,
            dims: [16; 3],
            n_points: 16,
            shape: ShapeDistribution::scaled_to(16),
            seed: 5,
            ..CohortSpec::default()
        };
        let n = spec.n_samples as f64;
        let sick = (0..spec.n_samples)
            .filter(|&i| draw_params(&spec, i).unwrap().group_label == GroupLabel::Pathology)
            .count() as f64;
        assert!((sick - n / 2.0).abs() <= 3.0 * (n / 4.0).sqrt(), "{sick} of {n}");
    }

    #[test]
    fn cohort_is_a_pure_function_of_spec() {
        let spec = small_spec(8);
        assert_eq!(generate_cohort(&spec).unwrap(), generate_cohort(&spec).unwrap());
        let other = CohortSpec { seed: 12, ..spec.clone() };
        assert_ne!(generate_cohort(&spec).unwrap().samples[0].correspondences, generate_cohort(&other).unwrap().samples[0].correspondences);
    }

    #[test]
    fn correspondences_are_independent_of_texture() {
        let spec = small_spec(8);
        let plain = CohortSpec {
            texture: TextureConfig { blob_count: 0, gradient_amplitude: 0.0, ..spec.texture.clone() },
            ..spec.clone()
        };
        let a = generate_cohort(&spec).unwrap();
        let b = generate_cohort(&plain).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.correspondences, y.correspondences);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(CohortSpec { n_samples: 7, ..small_spec(8) }.validate().is_err());
        assert!(CohortSpec { n_points: 8, ..small_spec(8) }.validate().is_err());
        assert!(CohortSpec { splits: [0.5, 0.2, 0.2], ..small_spec(8) }.validate().is_err());
    }
}
