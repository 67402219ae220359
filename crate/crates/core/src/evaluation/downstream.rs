use adassm_nn::layers::{LeakyRelu, Linear};
use adassm_nn::{Adam, Layer, Sequential, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::CorrespondenceSet;
use crate::shape_space::fit_pca;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamConfig {
    pub folds: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Explained-variance threshold of the per-fold PCA.
    pub variance_threshold: f64,
    pub seed: u64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            hidden: 16,
            epochs: 300,
            lr: 0.01,
            variance_threshold: 0.95,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamResult {
    pub mean: f64,
    pub std: f64,
    pub fold_accuracies: Vec<f64>,
}

/// Stratified fold index per sample: each class is shuffled and dealt
/// round-robin.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            assignment[i] = (k + offset) % folds;
        }
        // continue dealing where the previous class stopped to balance fold sizes
        offset += labels.iter().filter(|&&l| l == c).count();
    }
    assignment
}

fn train_mlp(x: &[Vec<f64>], y: &[usize], n_classes: usize, cfg: &DownstreamConfig, seed: u64) -> Sequential<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::new();
    net.push(Linear::new("mlp.hidden", x[0].len(), cfg.hidden, 2f64.sqrt(), &mut rng));
    net.push(LeakyRelu::relu());
    net.push(Linear::new("mlp.out", cfg.hidden, n_classes, 1.0, &mut rng));
    let input = Tensor::from_f64(&[x.len(), x[0].len()], &x.concat());
    let mut opt = Adam::new(cfg.lr);
    let n = x.len() as f64;
    for _ in 0..cfg.epochs {
        let logits = net.forward(&input);
        let mut grad = vec![0.0; logits.len()];
        for i in 0..x.len() {
            let row = logits.item(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for c in 0..n_classes {
                let p = (row[c] - max).exp() / z;
                grad[i * n_classes + c] = (p - if y[i] == c { 1.0 } else { 0.0 }) / n;
            }
        }
        net.backward(&Tensor::from_vec(logits.shape(), grad));
        opt.step(net.params_mut());
    }
    net
}

fn predict(net: &mut Sequential<f64>, x: &[Vec<f64>]) -> Vec<usize> {
    let logits = net.forward(&Tensor::from_f64(&[x.len(), x[0].len()], &x.concat()));
    (0..x.len())
        .map(|i| {
            logits
                .item(i)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(c, _)| c)
                .unwrap_or(0)
        })
        .collect()
}

/// Stratified k-fold accuracy of an MLP on per-fold PCA scores of the shapes.
pub fn classify_downstream(
    shapes: &[CorrespondenceSet],
    labels: &[usize],
    cfg: &DownstreamConfig,
) -> Result<DownstreamResult> {
    if shapes.len() != labels.len() {
        return Err(Error::Dimension {
            what: "label count",
            expected: shapes.len(),
            found: labels.len(),
        });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let counts: Vec<usize> = (0..n_classes).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Config("downstream classification needs at least two classes".into()));
    }
    if let Some(&min) = counts.iter().filter(|&&c| c > 0).min() {
        if min < 4 {
            return Err(Error::TooFew {
                what: "samples per class",
                needed: 4,
                got: min,
            });
        }
    }
    if cfg.folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {}", cfg.folds)));
    }
    let assignment = stratified_folds(labels, cfg.folds, cfg.seed);
    let mut accs = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let train: Vec<usize> = (0..shapes.len()).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..shapes.len()).filter(|&i| assignment[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        for (c, &count) in counts.iter().enumerate() {
            let in_train = train.iter().filter(|&&i| labels[i] == c).count();
            if count > 0 && in_train < 2 {
                return Err(Error::TooFew {
                    what: "training samples of a class in a fold",
                    needed: 2,
                    got: in_train,
                });
            }
        }
        let train_shapes: Vec<CorrespondenceSet> = train.iter().map(|&i| shapes[i].clone()).collect();
        let pca = fit_pca(&train_shapes, cfg.variance_threshold)?;
        let scale = pca.eigenvalues[0].sqrt();
        let features = |idx: &[usize]| -> Result<Vec<Vec<f64>>> {
            idx.iter()
                .map(|&i| {
                    let s = pca.project(&shapes[i])?;
                    Ok(s.iter().map(|v| v / scale).collect())
                })
                .collect()
        };
        let (xtr, xte) = (features(&train)?, features(&test)?);
        let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let mut net = train_mlp(&xtr, &ytr, n_classes, cfg, cfg.seed.wrapping_add(fold as u64));
        let pred = predict(&mut net, &xte);
        let correct = pred.iter().zip(&test).filter(|(p, &i)| **p == labels[i]).count();
        accs.push(correct as f64 / test.len() as f64);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64).sqrt();
    Ok(DownstreamResult {
        mean,
        std,
        fold_accuracies: accs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn shapes_with_labels(n: usize, separable: bool, seed: u64) -> (Vec<CorrespondenceSet>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shapes = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let a: f64 = if separable {
                if label == 1 { 3.0 } else { -3.0 }
            } else {
                rng.sample(StandardNormal)
            };
            let pts = (0..6)
                .map(|k| {
                    let e: f64 = rng.sample(StandardNormal);
                    [a * (k as f64 + 1.0) + 0.3 * e, 0.2 * rng.sample::<f64, _>(StandardNormal), k as f64]
                })
                .collect();
            shapes.push(CorrespondenceSet::new(pts));
            labels.push(label);
        }
        (shapes, labels)
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..20).map(|i| (i % 2 == 0) as usize).collect();
        let f = stratified_folds(&labels, 5, 1);
        for fold in 0..5 {
            for c in 0..2 {
                assert_eq!((0..20).filter(|&i| f[i] == fold && labels[i] == c).count(), 2);
            }
        }
    }

    #[test]
    fn separable_construction_is_learned() {
        let (shapes, labels) = shapes_with_labels(40, true, 2);
        let r = classify_downstream(&shapes, &labels, &DownstreamConfig::default()).unwrap();
        assert!(r.mean >= 0.95, "{r:?}");
        assert_eq!(r.fold_accuracies.len(), 5);
    }

    #[test]
    fn random_labels_are_near_chance() {
        let (shapes, labels) = shapes_with_labels(60, false, 3);
        let r = classify_downstream(&shapes, &labels, &DownstreamConfig::default()).unwrap();
        // binomial spread of accuracy on 60 held-out predictions
        let sigma = (0.25f64 / 60.0).sqrt();
        assert!((r.mean - 0.5).abs() <= 3.0 * sigma, "{r:?}");
    }

    #[test]
    fn rejects_degenerate_labels() {
        let (shapes, mut labels) = shapes_with_labels(10, true, 4);
        labels.iter_mut().for_each(|l| *l = 0);
        assert!(classify_downstream(&shapes, &labels, &DownstreamConfig::default()).is_err());
        let (shapes, labels) = shapes_with_labels(6, true, 4);
        assert!(classify_downstream(&shapes, &labels, &DownstreamConfig::default()).is_err());
    }
}
