use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cohort::CorrespondenceSet;
use crate::error::{format_err, io_err};
use crate::{Error, Result};

/// Linear shape space over flattened correspondences.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `K` orthonormal rows of length `3M`.
    pub components: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Sum of all non-zero eigenvalues (retained or not).
    pub total_variance: f64,
}

#[derive(Serialize, Deserialize)]
struct PcaJson {
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    total_variance: f64,
    n_components: usize,
    dim: usize,
}

/// Fit on training correspondences, keeping the fewest components whose
/// explained variance reaches `variance_threshold`.
pub fn fit_pca(train: &[CorrespondenceSet], variance_threshold: f64) -> Result<PcaModel> {
    if train.len() < 2 {
        return Err(Error::TooFew {
            what: "training shapes for PCA",
            needed: 2,
            got: train.len(),
        });
    }
    if !(0.0..=1.0).contains(&variance_threshold) {
        return Err(Error::Config(format!("variance threshold {variance_threshold} outside [0, 1]")));
    }
    for s in &train[1..] {
        train[0].ensure_same_len(s)?;
    }
    let n = train.len();
    let flat: Vec<Vec<f64>> = train.iter().map(|c| c.flatten()).collect();
    let dim = flat[0].len();
    let mut mean = vec![0.0; dim];
    for x in &flat {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, dim, |i, j| flat[i][j] - mean[j]);
    // Eigen-decompose the small n x n Gram matrix instead of the 3M x 3M covariance.
    let gram = (&centered * centered.transpose()) / (n - 1) as f64;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    let tol = lmax * 1e-10 + 1e-300;

    let mut eigenvalues = Vec::new();
    let mut components = Vec::new();
    for &k in &order {
        let lambda = eig.eigenvalues[k];
        if lambda <= tol {
            break;
        }
        let v = eig.eigenvectors.column(k);
        let u = centered.transpose() * v;
        let norm = u.norm();
        let mut row: Vec<f64> = u.iter().map(|x| x / norm).collect();
        // deterministic sign: largest-magnitude entry positive
        let (_, &pivot) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("non-empty component");
        if pivot < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvalues.push(lambda);
        components.push(row);
    }
    let total: f64 = eigenvalues.iter().sum();
    let mut keep = eigenvalues.len();
    let mut acc = 0.0;
    for (i, l) in eigenvalues.iter().enumerate() {
        acc += l;
        if acc >= variance_threshold * total * (1.0 - 1e-12) {
            keep = i + 1;
            break;
        }
    }
    eigenvalues.truncate(keep);
    components.truncate(keep);
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
        total_variance: total,
    })
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_variance(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.eigenvalues.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    /// Keep only the leading `k` components.
    pub fn truncate(&mut self, k: usize) {
        self.components.truncate(k);
        self.eigenvalues.truncate(k);
    }

    pub fn project_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                what: "flattened shape length",
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }

    pub fn project(&self, shape: &CorrespondenceSet) -> Result<Vec<f64>> {
        self.project_flat(&shape.flatten())
    }

    pub fn reconstruct_flat(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.n_components() {
            return Err(Error::Dimension {
                what: "score vector length",
                expected: self.n_components(),
                found: scores.len(),
            });
        }
        let mut out = self.mean.clone();
        for (c, &s) in self.components.iter().zip(scores) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += s * v;
            }
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let json_path = dir.join("pca.json");
        let meta = PcaJson {
            mean: self.mean.clone(),
            eigenvalues: self.eigenvalues.clone(),
            total_variance: self.total_variance,
            n_components: self.n_components(),
            dim: self.dim(),
        };
        fs::write(&json_path, serde_json::to_string_pretty(&meta).map_err(format_err(&json_path))?)
            .map_err(io_err(&json_path))?;
        let blob_path = dir.join("components.f32");
        let bytes: Vec<u8> = self
            .components
            .iter()
            .flat_map(|row| row.iter().flat_map(|&v| (v as f32).to_le_bytes()))
            .collect();
        fs::write(&blob_path, bytes).map_err(io_err(&blob_path))
    }

    /// Load a saved model; component values are `f32` precision.
    pub fn load(dir: &Path) -> Result<Self> {
        let json_path = dir.join("pca.json");
        let text = fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
        let meta: PcaJson = serde_json::from_str(&text).map_err(format_err(&json_path))?;
        let blob_path = dir.join("components.f32");
        let bytes = fs::read(&blob_path).map_err(io_err(&blob_path))?;
        if bytes.len() != 4 * meta.n_components * meta.dim {
            return Err(Error::Format {
                path: blob_path,
                message: format!("expected {} x {} floats", meta.n_components, meta.dim),
            });
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let components = if meta.dim == 0 {
            Vec::new()
        } else {
            vals.chunks(meta.dim).map(|r| r.to_vec()).collect()
        };
        Ok(Self {
            mean: meta.mean,
            components,
            eigenvalues: meta.eigenvalues,
            total_variance: meta.total_variance,
        })
    }
}

/// Correspondences for a score vector: `mean + components^T * scores`.
pub fn reconstruct_correspondences(pca: &PcaModel, scores: &[f64]) -> Result<CorrespondenceSet> {
    CorrespondenceSet::from_flat(&pca.reconstruct_flat(scores)?)
}
