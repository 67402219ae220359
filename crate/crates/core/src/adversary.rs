//! Conditional noise generator, discriminator and gradient reversal.

use std::fs;
use std::path::Path;

use adassm_nn::layers::{Conv3d, InstanceNorm3d, LeakyRelu, Linear, Sigmoid, Tanh, Upsample2x, ZScore};
use adassm_nn::{checkpoint, Layer, Param, Real, Sequential, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{GroundTruthSample, Volume};
use crate::error::{format_err, io_err};
use crate::ssm_net::{tensor_item_to_volume, volumes_to_tensor};
use crate::{Error, Result};

pub const GENERATOR_CONFIG_FILE: &str = "generator_config.json";
pub const DISCRIMINATOR_CONFIG_FILE: &str = "discriminator_config.json";

/// Identity forward; backward multiplies the gradient by `-scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientReversal {
    pub scale: f64,
}

impl GradientReversal {
    pub fn new(scale: f64) -> Self {
        Self { scale }
    }
}

impl<T: Real> Layer<T> for GradientReversal {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        x.clone()
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut g = grad.clone();
        g.scale(T::of(-self.scale));
        g
    }
}

/// Noise scale `R`: `x_hat = x + R * G(z, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseScale(f64);

impl NoiseScale {
    pub fn new(r: f64) -> Result<Self> {
        if r > 0.0 && r.is_finite() {
            Ok(Self(r))
        } else {
            Err(Error::Config(format!("noise scale must be positive, got {r}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub input_dims: [usize; 3],
    /// Length of the Gaussian latent `z`.
    pub latent: usize,
    /// Channels at half resolution; doubled at each of the two lower levels.
    pub base_channels: usize,
}

impl GeneratorConfig {
    pub fn new(input_dims: [usize; 3]) -> Self {
        Self {
            input_dims,
            latent: 16,
            base_channels: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dims.iter().any(|&d| d == 0 || d % 8 != 0) {
            return Err(Error::Config(format!(
                "generator input dims {:?} must be positive multiples of 8",
                self.input_dims
            )));
        }
        if self.latent == 0 || self.base_channels == 0 {
            return Err(Error::Config("generator latent and channel counts must be positive".into()));
        }
        Ok(())
    }

    fn coarse_dims(&self) -> [usize; 3] {
        self.input_dims.map(|d| d / 8)
    }
}

/// Three-level U-Net `G(z, x)` with a tanh output; `z` is projected to a
/// spatial channel joined at the coarsest level. The levels run at 1/2, 1/4
/// and 1/8 resolution and the noise is upsampled back to the input grid,
/// which keeps the generator cheaper than the shape network.
pub struct NoiseGenerator<T: Real> {
    config: GeneratorConfig,
    zscore: ZScore<T>,
    level1: Sequential<T>,
    level2: Sequential<T>,
    level3: Sequential<T>,
    latent_proj: Linear<T>,
    bottom: Sequential<T>,
    up2: Upsample2x,
    dec2: Sequential<T>,
    up1: Upsample2x,
    dec1: Sequential<T>,
    up_out: Upsample2x,
}

fn conv_block<T: Real>(
    name: &str,
    cin: usize,
    cout: usize,
    stride: usize,
    norm: bool,
    rng: &mut ChaCha8Rng,
) -> Sequential<T> {
    let mut s = Sequential::new();
    s.push(Conv3d::new(&format!("{name}.conv"), cin, cout, 3, stride, 1, 2f64.sqrt(), rng));
    if norm {
        s.push(InstanceNorm3d::new(&format!("{name}.norm"), cout));
    }
    s.push(LeakyRelu::new(0.2));
    s
}

impl<T: Real> NoiseGenerator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.base_channels;
        let q: usize = config.coarse_dims().iter().product();
        let level1 = conv_block("gen.l1", 1, c, 2, false, &mut rng);
        let level2 = conv_block("gen.l2", c, 2 * c, 2, true, &mut rng);
        let level3 = conv_block("gen.l3", 2 * c, 4 * c, 2, true, &mut rng);
        let latent_proj = Linear::new("gen.z", config.latent, q, 1.0, &mut rng);
        let bottom = conv_block("gen.bottom", 4 * c + 1, 4 * c, 1, true, &mut rng);
        let dec2 = conv_block("gen.d2", 6 * c, 2 * c, 1, true, &mut rng);
        let mut dec1 = conv_block("gen.d1", 3 * c, c, 1, false, &mut rng);
        dec1.push(Conv3d::new("gen.out", c, 1, 3, 1, 1, 0.5, &mut rng));
        dec1.push(Tanh::new());
        Ok(Self {
            config,
            zscore: ZScore::new(),
            level1,
            level2,
            level3,
            latent_proj,
            bottom,
            up2: Upsample2x::new(),
            dec2,
            up1: Upsample2x::new(),
            dec1,
            up_out: Upsample2x::new(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Noise in `[-1, 1]` for `x: [N, 1, z, y, x]` and `z: [N, latent]`.
    pub fn forward(&mut self, x: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.config.input_dims;
        if x.shape().len() != 5 || x.shape()[1..] != [1, d[2], d[1], d[0]] {
            return Err(Error::Dimension {
                what: "generator input voxels per item",
                expected: d.iter().product(),
                found: x.item_len(),
            });
        }
        if z.batch() != x.batch() || z.item_len() != self.config.latent {
            return Err(Error::Dimension {
                what: "latent vector length",
                expected: self.config.latent,
                found: z.item_len(),
            });
        }
        let n = x.batch();
        let qd = self.config.coarse_dims();
        let h0 = self.zscore.forward(x);
        let s1 = self.level1.forward(&h0);
        let s2 = self.level2.forward(&s1);
        let s3 = self.level3.forward(&s2);
        let zmap = self.latent_proj.forward(z).reshape(&[n, 1, qd[2], qd[1], qd[0]]);
        let b = self.bottom.forward(&Tensor::cat_channels(&s3, &zmap));
        let u2 = self.up2.forward(&b);
        let d2 = self.dec2.forward(&Tensor::cat_channels(&u2, &s2));
        let u1 = self.up1.forward(&d2);
        let half = self.dec1.forward(&Tensor::cat_channels(&u1, &s1));
        Ok(self.up_out.forward(&half))
    }

    /// Accumulate parameter gradients from the gradient on the noise field.
    pub fn backward(&mut self, grad_noise: &Tensor<T>) {
        let c = self.config.base_channels;
        let g = self.up_out.backward(grad_noise);
        let g = self.dec1.backward(&g);
        let (g_u1, mut g_s1) = g.split_channels(2 * c);
        let g = self.up1.backward(&g_u1);
        let g = self.dec2.backward(&g);
        let (g_u2, mut g_s2) = g.split_channels(4 * c);
        let g = self.up2.backward(&g_u2);
        let g = self.bottom.backward(&g);
        let (g_s3, g_z) = g.split_channels(4 * c);
        let shape = [g_z.batch(), g_z.item_len()];
        self.latent_proj.backward(&g_z.reshape(&shape));
        g_s2.add_scaled(&self.level3.backward(&g_s3), T::one());
        g_s1.add_scaled(&self.level2.backward(&g_s2), T::one());
        // the input volume is data: skip its gradient
        self.level1.set_input_grad_mask(Some(vec![false; g_s1.batch()]));
        self.level1.backward(&g_s1);
        self.level1.set_input_grad_mask(None);
    }

    pub fn parameters(&self) -> Vec<&Param<T>> {
        let mut p = self.level1.params();
        p.extend(self.level2.params());
        p.extend(self.level3.params());
        p.extend(self.latent_proj.params());
        p.extend(self.bottom.params());
        p.extend(self.dec2.params());
        p.extend(self.dec1.params());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.level1.params_mut();
        p.extend(self.level2.params_mut());
        p.extend(self.level3.params_mut());
        p.extend(self.latent_proj.params_mut());
        p.extend(self.bottom.params_mut());
        p.extend(self.dec2.params_mut());
        p.extend(self.dec1.params_mut());
        p
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_config(dir, GENERATOR_CONFIG_FILE, &self.config)?;
        checkpoint::save_params(dir, &self.parameters())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut g = Self::new(load_config(dir, GENERATOR_CONFIG_FILE)?, 0)?;
        checkpoint::load_params(dir, g.parameters_mut())?;
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_dims: [usize; 3],
    pub channels: Vec<usize>,
}

impl DiscriminatorConfig {
    pub fn new(input_dims: [usize; 3]) -> Self {
        Self {
            input_dims,
            channels: vec![8, 16, 32],
        }
    }

    fn flat_features(&self) -> usize {
        let mut d = self.input_dims;
        for _ in &self.channels {
            d = d.map(|n| adassm_nn::layers::conv_output_len(n, 3, 2, 1));
        }
        self.channels.last().copied().unwrap_or(1) * d.iter().product::<usize>()
    }
}

/// Strided conv classifier returning `P(real)` per volume. The sigmoid is
/// kept outside the layer stack so losses can backpropagate logit gradients.
pub struct Discriminator<T: Real> {
    config: DiscriminatorConfig,
    net: Sequential<T>,
    probs: Option<Tensor<T>>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.channels.is_empty() || config.input_dims.contains(&0) {
            return Err(Error::Config(format!("degenerate discriminator config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Sequential::new();
        net.push(ZScore::new());
        let mut cin = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            net.push(Conv3d::new(&format!("disc{i}.conv"), cin, c, 3, 2, 1, 2f64.sqrt(), &mut rng));
            net.push(LeakyRelu::new(0.2));
            cin = c;
        }
        net.push(Linear::new("disc.fc", config.flat_features(), 1, 1.0, &mut rng));
        Ok(Self { config, net, probs: None })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Probabilities `[N, 1]`.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.config.input_dims;
        if x.shape().len() != 5 || x.shape()[1..] != [1, d[2], d[1], d[0]] {
            return Err(Error::Dimension {
                what: "discriminator input voxels per item",
                expected: d.iter().product(),
                found: x.item_len(),
            });
        }
        let p = Sigmoid::new().forward(&self.net.forward(x));
        self.probs = Some(p.clone());
        Ok(p)
    }

    /// Backward from gradients w.r.t. the probabilities. Accumulates
    /// parameter gradients; returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let p = self.probs.as_ref().expect("Discriminator::backward before forward");
        let data = p.data().iter().zip(grad.data()).map(|(&y, &g)| g * y * (T::one() - y)).collect();
        self.backward_logits(&Tensor::from_vec(p.shape(), data))
    }

    /// Backward from gradients w.r.t. the pre-sigmoid logits; these stay
    /// informative where the sigmoid saturates in storage precision.
    pub fn backward_logits(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        self.probs = None;
        self.net.backward(grad)
    }

    /// [`Self::backward_logits`] for parameter gradients only; skips the
    /// input gradient.
    pub fn backward_logits_params(&mut self, grad: &Tensor<T>) {
        self.net.set_input_grad_mask(Some(vec![false; grad.batch()]));
        self.backward_logits(grad);
        self.net.set_input_grad_mask(None);
    }

    pub fn parameters(&self) -> Vec<&Param<T>> {
        self.net.params()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Param<T>> {
        self.net.params_mut()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_config(dir, DISCRIMINATOR_CONFIG_FILE, &self.config)?;
        checkpoint::save_params(dir, &self.parameters())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut d = Self::new(load_config(dir, DISCRIMINATOR_CONFIG_FILE)?, 0)?;
        checkpoint::load_params(dir, d.parameters_mut())?;
        Ok(d)
    }
}

fn save_config<C: Serialize>(dir: &Path, file: &str, config: &C) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(file);
    let json = serde_json::to_string_pretty(config).map_err(format_err(&path))?;
    fs::write(&path, json).map_err(io_err(&path))
}

fn load_config<C: for<'de> Deserialize<'de>>(dir: &Path, file: &str) -> Result<C> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(format_err(&path))
}

/// `n` latent vectors drawn from `N(0, I)`.
pub fn sample_latent<T: Real, R: Rng + ?Sized>(n: usize, latent: usize, rng: &mut R) -> Tensor<T> {
    let data: Vec<f64> = (0..n * latent).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_f64(&[n, latent], &data)
}

/// Noise field for a single volume.
pub fn generate_noise<T: Real>(g: &mut NoiseGenerator<T>, z: &[f64], x: &Volume) -> Result<Volume> {
    let zt = Tensor::from_f64(&[1, z.len()], z);
    if x.dims != g.config.input_dims {
        return Err(Error::Dimension {
            what: "generator input voxels",
            expected: g.config.input_dims.iter().product(),
            found: x.len(),
        });
    }
    let noise = g.forward(&volumes_to_tensor(&[x]), &zt)?;
    Ok(tensor_item_to_volume(&noise, 0, x.spacing))
}

/// Voxelwise `x + r * noise`.
pub fn apply_noise(x: &Volume, noise: &Volume, r: f64) -> Result<Volume> {
    if x.dims != noise.dims {
        return Err(Error::Dimension {
            what: "noise voxels",
            expected: x.len(),
            found: noise.len(),
        });
    }
    let mut out = x.clone();
    for (o, &n) in out.data.iter_mut().zip(&noise.data) {
        *o = perturb(*o, n, r);
    }
    Ok(out)
}

/// `x + r * n`, rounded so that `|result - x| <= r * |n|` holds exactly
/// despite storage precision.
fn perturb<T: Real>(x: T, n: T, r: f64) -> T {
    let (xf, d) = (x.f64(), r * n.f64());
    let mut v = T::of(xf + d);
    while (v.f64() - xf).abs() > d.abs() {
        v = v.step_toward(x);
    }
    v
}

/// Noisy copy of `sample`: the volume is perturbed by the generator, the
/// ground-truth correspondences are carried over unchanged.
pub fn adversarial_sample<T: Real>(
    g: &mut NoiseGenerator<T>,
    sample: &GroundTruthSample,
    z: &[f64],
    r: f64,
) -> Result<GroundTruthSample> {
    let noise = generate_noise(g, z, &sample.volume)?;
    Ok(GroundTruthSample {
        volume: apply_noise(&sample.volume, &noise, r)?,
        augmented: true,
        ..sample.clone()
    })
}

/// Tensor form of [`apply_noise`].
pub fn apply_noise_tensor<T: Real>(x: &Tensor<T>, noise: &Tensor<T>, r: f64) -> Tensor<T> {
    let mut out = x.clone();
    for (o, &n) in out.data_mut().iter_mut().zip(noise.data()) {
        *o = perturb(*o, n, r);
    }
    out
}

/// Probability that `x` is real.
pub fn discriminate<T: Real>(d: &mut Discriminator<T>, x: &Volume) -> Result<f64> {
    Ok(d.forward(&volumes_to_tensor(&[x]))?.data()[0].f64())
}
