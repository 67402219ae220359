use adassm_nn::{Adam, Layer, Real, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::adversary::{
    apply_noise_tensor, sample_latent, Discriminator, DiscriminatorConfig, GeneratorConfig, GradientReversal,
    NoiseGenerator,
};
use crate::losses::{
    contrastive_loss_grad, gan_logit_grads, gan_losses, rmse_loss_grad, spatial_tv_grad, total_loss, tv_loss_grad, LossBreakdown,
    LossWeights, TvKind,
};
use crate::ssm_net::{ImageToSsmNet, NetConfig};
use crate::{Error, Result};

/// Per-step settings shared by every mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub weights: LossWeights,
    pub noise_scale: f64,
    pub lambda_rev: f64,
    pub tv_kind: TvKind,
    pub non_saturating: bool,
}

/// The shape network, the adversaries and their optimizers.
pub struct Networks<T: Real> {
    pub model: ImageToSsmNet<T>,
    pub generator: NoiseGenerator<T>,
    pub discriminator: Discriminator<T>,
    pub opt_model: Adam<T>,
    pub opt_gen: Adam<T>,
    pub opt_disc: Adam<T>,
}

impl<T: Real> Networks<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        net: NetConfig,
        gen: GeneratorConfig,
        disc: DiscriminatorConfig,
        seed: u64,
        lr_model: f64,
        lr_gen: f64,
        lr_disc: f64,
    ) -> Result<Self> {
        Ok(Self {
            model: ImageToSsmNet::new(net, seed)?,
            generator: NoiseGenerator::new(gen, seed.wrapping_add(1))?,
            discriminator: Discriminator::new(disc, seed.wrapping_add(2))?,
            opt_model: Adam::new(lr_model),
            opt_gen: Adam::new(lr_gen),
            opt_disc: Adam::new(lr_disc),
        })
    }
}

/// Random split of a batch into `X1` (`ceil(B/2)` items) and `X2`.
pub fn partition_batch<S: Clone, R: Rng + ?Sized>(batch: &[S], rng: &mut R) -> Result<(Vec<S>, Vec<S>)> {
    if batch.len() < 2 {
        return Err(Error::TooFew {
            what: "batch items to partition",
            needed: 2,
            got: batch.len(),
        });
    }
    let mut idx: Vec<usize> = (0..batch.len()).collect();
    idx.shuffle(rng);
    let n1 = batch.len().div_ceil(2);
    Ok((
        idx[..n1].iter().map(|&i| batch[i].clone()).collect(),
        idx[n1..].iter().map(|&i| batch[i].clone()).collect(),
    ))
}

fn rows<T: Real>(t: &Tensor<T>, start: usize, end: usize) -> Vec<Vec<f64>> {
    (start..end).map(|i| t.item(i).iter().map(|v| v.f64()).collect()).collect()
}

/// Mean per-sample RMSE of `pred` rows `offset..offset + targets.len()`,
/// accumulating `scale * gradient` into `grad`.
fn batch_rmse<T: Real>(pred: &Tensor<T>, offset: usize, targets: &[&[f64]], scale: f64, grad: &mut [f64]) -> Result<f64> {
    let width = pred.item_len();
    let n = targets.len() as f64;
    let mut total = 0.0;
    for (k, y) in targets.iter().enumerate() {
        let p: Vec<f64> = pred.item(offset + k).iter().map(|v| v.f64()).collect();
        let (r, g) = rmse_loss_grad(&p, y)?;
        total += r / n;
        let row = &mut grad[(offset + k) * width..(offset + k + 1) * width];
        for (a, b) in row.iter_mut().zip(g) {
            *a += scale * b / n;
        }
    }
    Ok(total)
}

/// In-batch contrastive loss between rows `0..n` (clean) and
/// `noisy_offset..noisy_offset + n`; gradient scaled by `weight` when positive.
fn batch_contrastive<T: Real>(
    emb: &Tensor<T>,
    n: usize,
    noisy_offset: usize,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if n < 2 {
        return Ok(0.0);
    }
    let clean = rows(emb, 0, n);
    let noisy = rows(emb, noisy_offset, noisy_offset + n);
    let (l, gc, gn) = contrastive_loss_grad(&clean, &noisy)?;
    if weight > 0.0 {
        let w = emb.item_len();
        for i in 0..n {
            for k in 0..w {
                grad[i * w + k] += weight * gc[i][k];
                grad[(noisy_offset + i) * w + k] += weight * gn[i][k];
            }
        }
    }
    Ok(l)
}

fn to_tensor<T: Real>(shape: &[usize], data: &[f64]) -> Tensor<T> {
    Tensor::from_f64(shape, data)
}

/// Plain supervised step on clean volumes only.
pub fn train_step_noaug<T: Real>(nets: &mut Networks<T>, x: &Tensor<T>, y: &[&[f64]]) -> Result<LossBreakdown> {
    let out = nets.model.forward(x)?;
    let mut grad = vec![0.0; out.correspondences.len()];
    let rmse_clean = batch_rmse(&out.correspondences, 0, y, 1.0, &mut grad)?;
    nets.model.backward_masked(&to_tensor(out.correspondences.shape(), &grad), None, &vec![false; x.batch()]);
    nets.opt_model.step(nets.model.parameters_mut());
    Ok(LossBreakdown {
        rmse_clean,
        total: rmse_clean,
        ..LossBreakdown::default()
    })
}

/// Model forward/backward on `[x1, x2, x1_hat]` with clean and noisy RMSE and
/// contrastive terms. Returns the breakdown (without GAN terms) and the
/// gradient on `x1_hat` after the reversal layer.
fn model_pass<T: Real>(
    nets: &mut Networks<T>,
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    x1_hat: &Tensor<T>,
    y1: &[&[f64]],
    y2: &[&[f64]],
    cfg: &StepConfig,
) -> Result<(LossBreakdown, Tensor<T>)> {
    let (n1, n2) = (x1.batch(), x2.batch());
    let mut reversal = GradientReversal::new(cfg.lambda_rev);
    let noisy_in = reversal.forward(x1_hat);
    let input = Tensor::cat_batch(&[x1, x2, &noisy_in]);
    let out = nets.model.forward(&input)?;
    let mut g_corr = vec![0.0; out.correspondences.len()];
    let mut g_b = vec![0.0; out.bottleneck.len()];
    let clean_targets: Vec<&[f64]> = y1.iter().chain(y2).copied().collect();
    let rmse_clean = batch_rmse(&out.correspondences, 0, &clean_targets, 1.0, &mut g_corr)?;
    let rmse_noisy = batch_rmse(&out.correspondences, n1 + n2, y1, 1.0, &mut g_corr)?;
    let contrastive_b = batch_contrastive(&out.bottleneck, n1, n1 + n2, cfg.weights.lambda_b, &mut g_b)?;
    let contrastive_p = batch_contrastive(&out.correspondences, n1, n1 + n2, cfg.weights.lambda_p, &mut g_corr)?;
    // only the noisy items need an input gradient
    let needed: Vec<bool> = (0..input.batch()).map(|i| i >= n1 + n2).collect();
    let g_in = nets.model.backward_masked(
        &to_tensor(out.correspondences.shape(), &g_corr),
        Some(&to_tensor(out.bottleneck.shape(), &g_b)),
        &needed,
    );
    let g_hat = reversal.backward(&g_in.slice_batch(n1 + n2, 2 * n1 + n2));
    Ok((
        LossBreakdown {
            rmse_noisy,
            rmse_clean,
            contrastive_b,
            contrastive_p,
            ..LossBreakdown::default()
        },
        g_hat,
    ))
}

/// Supervised step with voxelwise Gaussian noise on `X1`; no adversary.
pub fn train_step_gaussian<T: Real, R: Rng + ?Sized>(
    nets: &mut Networks<T>,
    x: &Tensor<T>,
    y: &[&[f64]],
    sigma: f64,
    cfg: &StepConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let idx: Vec<usize> = (0..x.batch()).collect();
    let (i1, i2) = partition_batch(&idx, rng)?;
    let (x1, x2) = (gather(x, &i1), gather(x, &i2));
    let (y1, y2): (Vec<&[f64]>, Vec<&[f64]>) = (i1.iter().map(|&i| y[i]).collect(), i2.iter().map(|&i| y[i]).collect());
    let mut x1_hat = x1.clone();
    for v in x1_hat.data_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += T::of(sigma * e);
    }
    let no_contrastive = StepConfig {
        weights: LossWeights {
            lambda_b: 0.0,
            lambda_p: 0.0,
            ..cfg.weights
        },
        ..*cfg
    };
    let (mut b, _) = model_pass(nets, &x1, &x2, &x1_hat, &y1, &y2, &no_contrastive)?;
    nets.opt_model.step(nets.model.parameters_mut());
    b.contrastive_b = 0.0;
    b.contrastive_p = 0.0;
    b.total = b.rmse_clean + b.rmse_noisy;
    Ok(b)
}

/// Rows `idx` of a batch tensor.
pub fn gather<T: Real>(x: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let parts: Vec<Tensor<T>> = idx.iter().map(|&i| x.slice_batch(i, i + 1)).collect();
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Tensor::cat_batch(&refs)
}

/// One discriminator update on real `x2` against detached `x1_hat`;
/// returns `L_D`.
pub fn discriminator_step<T: Real>(nets: &mut Networks<T>, x2: &Tensor<T>, x1_hat: &Tensor<T>, cfg: &StepConfig) -> Result<f64> {
    let n2 = x2.batch();
    let p = nets.discriminator.forward(&Tensor::cat_batch(&[x2, x1_hat]))?;
    let probs = p.to_f64();
    let losses = gan_losses(&probs[..n2], &probs[n2..], 0.0, 0.0, cfg.non_saturating)?;
    let (g_real, g_fake, _) = gan_logit_grads(&probs[..n2], &probs[n2..], cfg.non_saturating);
    let grad: Vec<f64> = g_real.into_iter().chain(g_fake).collect();
    nets.discriminator.backward_logits_params(&to_tensor(p.shape(), &grad));
    nets.opt_disc.step(nets.discriminator.parameters_mut());
    Ok(losses.l_d)
}

/// Joint backward for the generator and the shape network, given a generator
/// forward pass whose output is `noise` (cached inside the generator).
/// Accumulates gradients in the generator and model without stepping.
#[allow(clippy::too_many_arguments)]
pub fn joint_backward<T: Real>(
    nets: &mut Networks<T>,
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    noise: &Tensor<T>,
    y1: &[&[f64]],
    y2: &[&[f64]],
    cfg: &StepConfig,
) -> Result<LossBreakdown> {
    let n1 = x1.batch();
    let x1_hat = apply_noise_tensor(x1, noise, cfg.noise_scale);
    let w = cfg.weights;

    // noise regularizer, averaged over X1
    let mut tv = 0.0;
    let mut g_tv = vec![0.0; noise.len()];
    let item = noise.item_len();
    let dims = {
        let s = noise.shape();
        [s[4], s[3], s[2]]
    };
    for i in 0..n1 {
        let field: Vec<f64> = noise.item(i).iter().map(|v| v.f64()).collect();
        let (v, g) = match cfg.tv_kind {
            TvKind::L2Norm => tv_loss_grad(&field),
            TvKind::Spatial => spatial_tv_grad(&field, dims),
        };
        tv += v / n1 as f64;
        for (a, b) in g_tv[i * item..(i + 1) * item].iter_mut().zip(g) {
            *a = b / n1 as f64;
        }
    }

    // generator GAN term through the (just updated) discriminator
    let p_fake = nets.discriminator.forward(&x1_hat)?;
    let probs = p_fake.to_f64();
    let gan = gan_losses(&probs, &probs, w.beta, tv, cfg.non_saturating)?;
    let (_, _, g_fake_g) = gan_logit_grads(&probs, &probs, cfg.non_saturating);
    let g_fake: Vec<f64> = g_fake_g.iter().map(|g| w.alpha * g).collect();
    let mut g_hat = nets.discriminator.backward_logits(&to_tensor(p_fake.shape(), &g_fake));
    adassm_nn::zero_grads(nets.discriminator.parameters_mut());

    let (mut b, g_model) = model_pass(nets, x1, x2, &x1_hat, y1, y2, cfg)?;
    g_hat.add_scaled(&g_model, T::one());

    // x_hat = x + R * noise; plus the regularizer's direct gradient
    let mut g_noise = g_hat;
    g_noise.scale(T::of(cfg.noise_scale));
    let reg = to_tensor::<T>(noise.shape(), &g_tv);
    g_noise.add_scaled(&reg, T::of(w.alpha * w.beta));
    nets.generator.backward(&g_noise);

    b.tv = tv;
    b.gan_g = gan.l_g;
    b.total = total_loss(&b, &w);
    Ok(b)
}

/// Full adversarial step: partition, sample `z` per `X1` item, build
/// `x_hat`, update the discriminator, then jointly update generator and model.
pub fn train_step_adassm<T: Real, R: Rng + ?Sized>(
    nets: &mut Networks<T>,
    x: &Tensor<T>,
    y: &[&[f64]],
    cfg: &StepConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let idx: Vec<usize> = (0..x.batch()).collect();
    let (i1, i2) = partition_batch(&idx, rng)?;
    let (x1, x2) = (gather(x, &i1), gather(x, &i2));
    let (y1, y2): (Vec<&[f64]>, Vec<&[f64]>) = (i1.iter().map(|&i| y[i]).collect(), i2.iter().map(|&i| y[i]).collect());
    let latent = nets.generator.config().latent;
    let z = sample_latent::<T, _>(x1.batch(), latent, rng);
    let noise = nets.generator.forward(&x1, &z)?;
    let x1_hat = apply_noise_tensor(&x1, &noise, cfg.noise_scale);
    let max = x1_hat
        .data()
        .iter()
        .zip(x1.data())
        .map(|(a, b)| (a.f64() - b.f64()).abs())
        .fold(0.0, f64::max);
    if max > cfg.noise_scale {
        return Err(Error::PerturbationBound {
            max,
            bound: cfg.noise_scale,
        });
    }
    let gan_d = discriminator_step(nets, &x2, &x1_hat, cfg)?;
    let mut b = joint_backward(nets, &x1, &x2, &noise, &y1, &y2, cfg)?;
    nets.opt_gen.step(nets.generator.parameters_mut());
    nets.opt_model.step(nets.model.parameters_mut());
    b.gan_d = gan_d;
    Ok(b)
}
