use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Isotropic Gaussian kernel density over PCA scores.
#[derive(Clone, Debug, PartialEq)]
pub struct KdeModel {
    pub training_scores: Vec<Vec<f64>>,
    pub bandwidth: f64,
}

/// Mean nearest-neighbour distance among the score vectors.
pub fn mean_nearest_neighbor_distance(scores: &[Vec<f64>]) -> f64 {
    let n = scores.len();
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    scores[i]
                        .iter()
                        .zip(&scores[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / n as f64
}

/// Fit with the mean nearest-neighbour bandwidth.
pub fn fit_kde(scores: Vec<Vec<f64>>) -> Result<KdeModel> {
    if scores.len() < 2 {
        return Err(Error::TooFew {
            what: "training scores for KDE",
            needed: 2,
            got: scores.len(),
        });
    }
    let bandwidth = mean_nearest_neighbor_distance(&scores);
    Ok(KdeModel {
        training_scores: scores,
        bandwidth,
    })
}

impl KdeModel {
    pub fn with_bandwidth(scores: Vec<Vec<f64>>, bandwidth: f64) -> Result<Self> {
        if scores.is_empty() || !(bandwidth >= 0.0) {
            return Err(Error::Config(format!("invalid KDE: {} scores, bandwidth {bandwidth}", scores.len())));
        }
        Ok(Self {
            training_scores: scores,
            bandwidth,
        })
    }

    /// One draw from the mixture.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let base = &self.training_scores[rng.gen_range(0..self.training_scores.len())];
        base.iter()
            .map(|&b| {
                let e: f64 = StandardNormal.sample(rng);
                b + self.bandwidth * e
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.training_scores[0].len()
    }
}

/// Draw `n` score vectors: a uniformly chosen training score plus
/// `N(0, bandwidth^2 I)`.
pub fn sample_kde(model: &KdeModel, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| model.draw(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores() -> Vec<Vec<f64>> {
        vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![1.0, 3.0], vec![-2.0, 0.5]]
    }

    #[test]
    fn zero_bandwidth_returns_training_scores() {
        let m = KdeModel::with_bandwidth(scores(), 0.0).unwrap();
        for s in sample_kde(&m, 50, 3) {
            assert!(m.training_scores.contains(&s));
        }
    }

    #[test]
    fn bandwidth_is_mean_nearest_neighbor_distance() {
        let m = fit_kde(vec![vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        assert!((m.bandwidth - (1.0 + 1.0 + 2.0) / 3.0).abs() < 1e-12);
        assert!(fit_kde(vec![vec![0.0]]).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let m = fit_kde(scores()).unwrap();
        assert_eq!(sample_kde(&m, 5, 9), sample_kde(&m, 5, 9));
        assert_ne!(sample_kde(&m, 5, 9), sample_kde(&m, 5, 10));
    }
}
