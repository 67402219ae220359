//! Training objectives with analytic gradients. All functions are pure and
//! work in `f64`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower clamp applied to every log argument.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// GAN weight.
    pub alpha: f64,
    /// Noise-regularizer weight inside the generator loss.
    pub beta: f64,
    /// Bottleneck contrastive weight.
    pub lambda_b: f64,
    /// Correspondence contrastive weight.
    pub lambda_p: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_b", self.lambda_b),
            ("lambda_p", self.lambda_p),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-step loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub tv: f64,
    pub gan_d: f64,
    pub gan_g: f64,
    pub rmse_noisy: f64,
    pub rmse_clean: f64,
    pub contrastive_b: f64,
    pub contrastive_p: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn all_finite(&self) -> bool {
        [
            self.tv,
            self.gan_d,
            self.gan_g,
            self.rmse_noisy,
            self.rmse_clean,
            self.contrastive_b,
            self.contrastive_p,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `alpha * L_G + L_rmse(noisy) + L_rmse(clean) + lambda_b * L_b + lambda_p * L_p`.
pub fn total_loss(b: &LossBreakdown, w: &LossWeights) -> f64 {
    w.alpha * b.gan_g + b.rmse_noisy + b.rmse_clean + w.lambda_b * b.contrastive_b + w.lambda_p * b.contrastive_p
}

/// Noise regularizer: the Euclidean norm of the raw noise field.
pub fn tv_loss(noise: &[f64]) -> f64 {
    noise.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gradient of [`tv_loss`]; zero at the origin.
pub fn tv_loss_grad(noise: &[f64]) -> (f64, Vec<f64>) {
    let norm = tv_loss(noise);
    let grad = if norm > 0.0 {
        noise.iter().map(|v| v / norm).collect()
    } else {
        vec![0.0; noise.len()]
    };
    (norm, grad)
}

/// Anisotropic total variation: sum of absolute forward differences along
/// each axis of an x-fastest field.
pub fn spatial_tv_grad(field: &[f64], dims: [usize; 3]) -> (f64, Vec<f64>) {
    assert_eq!(field.len(), dims.iter().product::<usize>(), "field/dims mismatch");
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut value = 0.0;
    let mut grad = vec![0.0; field.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = x + dims[0] * (y + dims[1] * z);
                for (axis, &coord) in [x, y, z].iter().enumerate() {
                    if coord + 1 < dims[axis] {
                        let j = i + strides[axis];
                        let d = field[j] - field[i];
                        value += d.abs();
                        let s = d.signum() * (d != 0.0) as u8 as f64;
                        grad[j] += s;
                        grad[i] -= s;
                    }
                }
            }
        }
    }
    (value, grad)
}

/// Which regularizer the generator loss uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvKind {
    /// Norm of the noise field.
    #[default]
    L2Norm,
    /// Spatial finite-difference total variation.
    Spatial,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLosses {
    pub l_d: f64,
    pub l_g: f64,
}

fn clamped_log(p: f64) -> (f64, f64) {
    // value and derivative of log(max(p, eps))
    if p >= LOG_EPS {
        (p.ln(), 1.0 / p)
    } else {
        (LOG_EPS.ln(), 0.0)
    }
}

/// `L_D = -mean log D(x2) - mean log(1 - D(x_hat))` and
/// `L_G = mean log(1 - D(x_hat)) + beta * tv` (or `-mean log D(x_hat) + beta * tv`
/// when `non_saturating`).
pub fn gan_losses(d_real: &[f64], d_fake: &[f64], beta: f64, tv: f64, non_saturating: bool) -> Result<GanLosses> {
    gan_losses_grad(d_real, d_fake, beta, tv, non_saturating).map(|g| g.0)
}

/// Losses plus `dL_D/dD(x2)`, `dL_D/dD(x_hat)` and `dL_G/dD(x_hat)`.
#[allow(clippy::type_complexity)]
pub fn gan_losses_grad(
    d_real: &[f64],
    d_fake: &[f64],
    beta: f64,
    tv: f64,
    non_saturating: bool,
) -> Result<(GanLosses, Vec<f64>, Vec<f64>, Vec<f64>)> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::TooFew {
            what: "discriminator batch entries",
            needed: 1,
            got: d_real.len().min(d_fake.len()),
        });
    }
    let (nr, nf) = (d_real.len() as f64, d_fake.len() as f64);
    let mut l_d = 0.0;
    let mut g_real = Vec::with_capacity(d_real.len());
    for &p in d_real {
        let (v, dv) = clamped_log(p);
        l_d -= v / nr;
        g_real.push(-dv / nr);
    }
    let mut g_fake_d = Vec::with_capacity(d_fake.len());
    let mut g_fake_g = Vec::with_capacity(d_fake.len());
    let mut l_g = beta * tv;
    for &p in d_fake {
        let (v, dv) = clamped_log(1.0 - p);
        l_d -= v / nf;
        // d/dp log(1 - p) = -dv
        g_fake_d.push(dv / nf);
        if non_saturating {
            let (u, du) = clamped_log(p);
            l_g -= u / nf;
            g_fake_g.push(-du / nf);
        } else {
            l_g += v / nf;
            g_fake_g.push(-dv / nf);
        }
    }
    Ok((GanLosses { l_d, l_g }, g_real, g_fake_d, g_fake_g))
}

/// Gradients of the unclamped `L_D` and `L_G` w.r.t. the discriminator
/// logits (`D = sigmoid(logit)`): `dL_D/dlogit(x2)`, `dL_D/dlogit(x_hat)`
/// and `dL_G/dlogit(x_hat)`. Unlike the chain through [`gan_losses_grad`],
/// these do not vanish when `D` saturates at 0 or 1.
pub fn gan_logit_grads(d_real: &[f64], d_fake: &[f64], non_saturating: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (nr, nf) = (d_real.len() as f64, d_fake.len() as f64);
    let g_real = d_real.iter().map(|&p| (p - 1.0) / nr).collect();
    let g_fake_d = d_fake.iter().map(|&p| p / nf).collect();
    let g_fake_g = d_fake
        .iter()
        .map(|&p| if non_saturating { (p - 1.0) / nf } else { -p / nf })
        .collect();
    (g_real, g_fake_d, g_fake_g)
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "correspondence vector length",
            expected: b.len(),
            found: a.len(),
        });
    }
    Ok(())
}

/// Square root of the mean squared error over all `3M` coordinates.
pub fn rmse_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_same_len(pred, gt)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok((pred.iter().zip(gt).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// [`rmse_loss`] and its gradient w.r.t. `pred` (zero when the error is zero).
pub fn rmse_loss_grad(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    let r = rmse_loss(pred, gt)?;
    let n = pred.len() as f64;
    let grad = if r > 0.0 {
        pred.iter().zip(gt).map(|(p, g)| (p - g) / (n * r)).collect()
    } else {
        vec![0.0; pred.len()]
    };
    Ok((r, grad))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_embeddings(clean: &[Vec<f64>], noisy: &[Vec<f64>]) -> Result<()> {
    if clean.len() != noisy.len() {
        return Err(Error::Dimension {
            what: "contrastive batch size",
            expected: clean.len(),
            found: noisy.len(),
        });
    }
    if clean.len() < 2 {
        return Err(Error::TooFew {
            what: "contrastive batch rows",
            needed: 2,
            got: clean.len(),
        });
    }
    for (row, v) in clean.iter().chain(noisy).enumerate() {
        if v.len() != clean[0].len() {
            return Err(Error::Dimension {
                what: "embedding width",
                expected: clean[0].len(),
                found: v.len(),
            });
        }
        if norm(v) == 0.0 {
            return Err(Error::ZeroNorm { row });
        }
    }
    Ok(())
}

/// In-batch InfoNCE with cosine similarity and unit temperature:
/// `mean_i -log(exp(s_ii) / sum_j exp(s_ij))`, `s_ij = cos(clean_i, noisy_j)`.
pub fn contrastive_loss(clean: &[Vec<f64>], noisy: &[Vec<f64>]) -> Result<f64> {
    contrastive_loss_grad(clean, noisy).map(|r| r.0)
}

/// Loss plus gradients w.r.t. the clean and noisy rows.
#[allow(clippy::type_complexity)]
pub fn contrastive_loss_grad(clean: &[Vec<f64>], noisy: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_embeddings(clean, noisy)?;
    let n = clean.len();
    let cn: Vec<f64> = clean.iter().map(|v| norm(v)).collect();
    let nn: Vec<f64> = noisy.iter().map(|v| norm(v)).collect();
    let sim: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| dot(&clean[i], &noisy[j]) / (cn[i] * nn[j])).collect())
        .collect();
    let mut loss = 0.0;
    // dL/ds_ij = (softmax_ij - delta_ij) / n
    let mut ds = vec![vec![0.0; n]; n];
    for i in 0..n {
        let max = sim[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = sim[i].iter().map(|s| (s - max).exp()).sum();
        let lse = max + z.ln();
        loss += (lse - sim[i][i]) / n as f64;
        for j in 0..n {
            let soft = (sim[i][j] - lse).exp();
            ds[i][j] = (soft - if i == j { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    let d = clean[0].len();
    let mut gc = vec![vec![0.0; d]; n];
    let mut gn = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let g = ds[i][j];
            if g == 0.0 {
                continue;
            }
            let s = sim[i][j];
            for k in 0..d {
                // d cos(a, b)/da = b/(|a||b|) - cos * a/|a|^2
                gc[i][k] += g * (noisy[j][k] / (cn[i] * nn[j]) - s * clean[i][k] / (cn[i] * cn[i]));
                gn[j][k] += g * (clean[i][k] / (cn[i] * nn[j]) - s * noisy[j][k] / (nn[j] * nn[j]));
            }
        }
    }
    Ok((loss, gc, gn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_loss(&[0.0; 8]), 0.0);
        assert!((tv_loss(&[1.0; 8]) - 8f64.sqrt()).abs() < 1e-12);
        let f = [0.5, -1.0, 2.0];
        let scaled: Vec<f64> = f.iter().map(|v| -3.0 * v).collect();
        assert!((tv_loss(&scaled) - 3.0 * tv_loss(&f)).abs() < 1e-12);
    }

    #[test]
    fn spatial_tv_of_step() {
        let mut f = vec![0.0; 8];
        f[1] = 1.0; // x = 1 column of a 2x2x2 block
        f[3] = 1.0;
        f[5] = 1.0;
        f[7] = 1.0;
        let (v, g) = spatial_tv_grad(&f, [2, 2, 2]);
        assert_eq!(v, 4.0);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[1], 1.0);
    }

    #[test]
    fn gan_examples() {
        let l = gan_losses(&[0.5, 0.5], &[0.5, 0.5, 0.5], 0.1, 2.0, false).unwrap();
        assert!((l.l_d - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.l_g - (0.5f64.ln() + 0.2)).abs() < 1e-12);
        let l0 = gan_losses(&[0.5], &[0.5], 0.0, 123.0, false).unwrap();
        assert!((l0.l_g - 0.5f64.ln()).abs() < 1e-12);
        assert!(gan_losses(&[], &[0.5], 0.0, 0.0, false).is_err());
        let clamped = gan_losses(&[0.0], &[1.0], 0.0, 0.0, false).unwrap();
        assert!((clamped.l_d + 2.0 * LOG_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((rmse_loss(&[1.0, 2.0, 2.0], &[0.0; 3]).unwrap() - 3f64.sqrt()).abs() < 1e-12);
        assert!(rmse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn contrastive_examples() {
        let same = vec![vec![1.0, 2.0, 3.0]; 5];
        assert!((contrastive_loss(&same, &same).unwrap() - 5f64.ln()).abs() < 1e-12);
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((contrastive_loss(&e, &e).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.3133).abs() < 1e-4);
        assert!(matches!(
            contrastive_loss(&[vec![0.0, 0.0], vec![1.0, 0.0]], &e),
            Err(Error::ZeroNorm { row: 0 })
        ));
        assert!(contrastive_loss(&e[..1], &e[..1]).is_err());
    }

    #[test]
    fn total_is_weighted_sum() {
        let b = LossBreakdown {
            tv: 3.0,
            gan_d: 1.0,
            gan_g: -0.5,
            rmse_noisy: 2.0,
            rmse_clean: 1.5,
            contrastive_b: 0.7,
            contrastive_p: 0.9,
            total: 0.0,
        };
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.1,
            lambda_b: 0.0,
            lambda_p: 0.0,
        };
        assert!((total_loss(&b, &w) - 3.0).abs() < 1e-12);
        let w2 = LossWeights {
            lambda_b: 0.5,
            lambda_p: 0.1,
            ..w
        };
        assert!((total_loss(&b, &w2) - (3.0 + 0.35 + 0.09)).abs() < 1e-12);
        assert!(LossWeights { alpha: -1.0, ..w }.validate().is_err());
    }

    fn finite_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn contrastive_gradient_matches_finite_differences(
            vals in proptest::collection::vec(-2.0f64..2.0, 18),
        ) {
            let rows = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(3).map(|c| c.to_vec()).collect() };
            let (c, n) = (rows(&vals[..9]), rows(&vals[9..]));
            prop_assume!(c.iter().chain(&n).all(|r| norm(r) > 0.2));
            let (_, gc, gn) = contrastive_loss_grad(&c, &n).unwrap();
            for i in 0..9 {
                let fd = finite_difference(|x| contrastive_loss(&rows(x), &n).unwrap(), &vals[..9], i);
                prop_assert!((fd - gc[i / 3][i % 3]).abs() < 1e-5);
                let fd = finite_difference(|x| contrastive_loss(&c, &rows(x)).unwrap(), &vals[9..], i);
                prop_assert!((fd - gn[i / 3][i % 3]).abs() < 1e-5);
            }
        }

        #[test]
        fn contrastive_is_scale_invariant_and_bounded(
            vals in proptest::collection::vec(-2.0f64..2.0, 16),
            s in 0.01f64..100.0,
        ) {
            let rows = |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(4).map(|c| c.to_vec()).collect() };
            let (c, n) = (rows(&vals[..8]), rows(&vals[8..]));
            prop_assume!(c.iter().chain(&n).all(|r| norm(r) > 1e-3));
            let l = contrastive_loss(&c, &n).unwrap();
            let scale = |r: &Vec<Vec<f64>>| r.iter().map(|v| v.iter().map(|x| x * s).collect()).collect::<Vec<Vec<f64>>>();
            prop_assert!((contrastive_loss(&scale(&c), &scale(&n)).unwrap() - l).abs() < 1e-9);
            prop_assert!(l > 0.0);
        }

        #[test]
        fn rmse_is_permutation_invariant_with_valid_gradient(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30),
            rot in 0usize..30,
        ) {
            let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let g: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let k = rot % p.len();
            let (mut p2, mut g2) = (p.clone(), g.clone());
            p2.rotate_left(k);
            g2.rotate_left(k);
            let r = rmse_loss(&p, &g).unwrap();
            prop_assert!((rmse_loss(&p2, &g2).unwrap() - r).abs() < 1e-12);
            let (_, grad) = rmse_loss_grad(&p, &g).unwrap();
            prop_assume!(r > 1e-3);
            for i in 0..p.len() {
                let fd = finite_difference(|x| rmse_loss(x, &g).unwrap(), &p, i);
                prop_assert!((fd - grad[i]).abs() < 1e-6);
            }
        }

        #[test]
        fn gan_logit_gradients_match_finite_differences(
            real in proptest::collection::vec(-4.0f64..4.0, 1..5),
            fake in proptest::collection::vec(-4.0f64..4.0, 1..5),
            ns in proptest::bool::ANY,
        ) {
            let sig = |v: &[f64]| v.iter().map(|l| 1.0 / (1.0 + (-l).exp())).collect::<Vec<f64>>();
            let (gr, gfd, gfg) = gan_logit_grads(&sig(&real), &sig(&fake), ns);
            for i in 0..real.len() {
                let fd = finite_difference(|x| gan_losses(&sig(x), &sig(&fake), 0.1, 1.0, ns).unwrap().l_d, &real, i);
                prop_assert!((fd - gr[i]).abs() < 1e-5);
            }
            for i in 0..fake.len() {
                let fd = finite_difference(|x| gan_losses(&sig(&real), &sig(x), 0.1, 1.0, ns).unwrap().l_d, &fake, i);
                prop_assert!((fd - gfd[i]).abs() < 1e-5);
                let fd = finite_difference(|x| gan_losses(&sig(&real), &sig(x), 0.1, 1.0, ns).unwrap().l_g, &fake, i);
                prop_assert!((fd - gfg[i]).abs() < 1e-5);
            }
        }

        #[test]
        fn gan_gradients_match_finite_differences(
            real in proptest::collection::vec(0.01f64..0.99, 1..5),
            fake in proptest::collection::vec(0.01f64..0.99, 1..5),
            ns in proptest::bool::ANY,
        ) {
            let (_, gr, gfd, gfg) = gan_losses_grad(&real, &fake, 0.1, 1.0, ns).unwrap();
            for i in 0..real.len() {
                let fd = finite_difference(|x| gan_losses(x, &fake, 0.1, 1.0, ns).unwrap().l_d, &real, i);
                prop_assert!((fd - gr[i]).abs() < 1e-4 * fd.abs().max(1.0));
            }
            for i in 0..fake.len() {
                let fd = finite_difference(|x| gan_losses(&real, x, 0.1, 1.0, ns).unwrap().l_d, &fake, i);
                prop_assert!((fd - gfd[i]).abs() < 1e-4 * fd.abs().max(1.0));
                let fd = finite_difference(|x| gan_losses(&real, x, 0.1, 1.0, ns).unwrap().l_g, &fake, i);
                prop_assert!((fd - gfg[i]).abs() < 1e-4 * fd.abs().max(1.0));
            }
        }
    }
}
