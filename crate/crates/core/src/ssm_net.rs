//! Image-to-SSM regression network: convolutional encoder to a bottleneck,
//! affine decoder to correspondences.

use std::fs;
use std::path::Path;

use adassm_nn::layers::{Conv3d, InstanceNorm3d, LeakyRelu, Linear, ZScore};
use adassm_nn::{checkpoint, Layer, Param, Real, Sequential, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{CorrespondenceSet, Volume};
use crate::error::{format_err, io_err};
use crate::shape_space::PcaModel;
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "net_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Volume dims `[x, y, z]`.
    pub input_dims: [usize; 3],
    /// Output channels of the stride-2 conv blocks.
    pub channels: Vec<usize>,
    /// Width of the first fully-connected layer.
    pub hidden: usize,
    /// Bottleneck width `L`.
    pub latent: usize,
    /// Number of correspondences `M`.
    pub n_points: usize,
}

impl NetConfig {
    pub fn new(input_dims: [usize; 3], n_points: usize) -> Self {
        Self {
            input_dims,
            channels: vec![8, 16, 32, 64],
            hidden: 128,
            latent: 32,
            n_points,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config(format!("degenerate network config {self:?}")));
        }
        if self.latent > 3 * self.n_points {
            return Err(Error::Config(format!(
                "bottleneck width {} exceeds output size {}",
                self.latent,
                3 * self.n_points
            )));
        }
        if self.input_dims.contains(&0) {
            return Err(Error::Config("input dims must be positive".into()));
        }
        Ok(())
    }

    /// Spatial dims after the conv stack.
    pub fn encoded_dims(&self) -> [usize; 3] {
        let mut d = self.input_dims;
        for _ in &self.channels {
            d = d.map(|n| adassm_nn::layers::conv_output_len(n, 3, 2, 1));
        }
        d
    }

    pub fn flat_features(&self) -> usize {
        self.channels.last().copied().unwrap_or(1) * self.encoded_dims().iter().product::<usize>()
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let mut total = 0;
        let mut cin = 1;
        for &c in &self.channels {
            total += cin * c * 27 + c + 2 * c;
            cin = c;
        }
        let out = 3 * self.n_points;
        total += self.flat_features() * self.hidden + self.hidden;
        total += self.hidden * self.latent + self.latent;
        total += self.latent * out + out;
        total
    }
}

/// Bottleneck and flattened correspondences for a batch.
#[derive(Clone, Debug)]
pub struct NetOutput<T> {
    /// `[N, L]`
    pub bottleneck: Tensor<T>,
    /// `[N, 3M]`, point-major `x y z` triples.
    pub correspondences: Tensor<T>,
}

pub struct ImageToSsmNet<T: Real> {
    config: NetConfig,
    zscore: ZScore<T>,
    encoder: Sequential<T>,
    head: Sequential<T>,
    decoder: Linear<T>,
}

/// Stack volumes into an `[N, 1, z, y, x]` tensor (x fastest, matching the
/// volume layout).
pub fn volumes_to_tensor<T: Real>(vols: &[&Volume]) -> Tensor<T> {
    let dims = vols[0].dims;
    let mut data = Vec::with_capacity(vols.len() * vols[0].len());
    for v in vols {
        assert_eq!(v.dims, dims, "volumes in a batch must share dims");
        data.extend(v.data.iter().map(|&x| T::of(x as f64)));
    }
    Tensor::from_vec(&[vols.len(), 1, dims[2], dims[1], dims[0]], data)
}

/// Inverse of [`volumes_to_tensor`] for one batch item.
pub fn tensor_item_to_volume<T: Real>(t: &Tensor<T>, i: usize, spacing: f64) -> Volume {
    let s = t.shape();
    Volume {
        dims: [s[4], s[3], s[2]],
        spacing,
        data: t.item(i).iter().map(|v| v.f64() as f32).collect(),
    }
}

pub fn correspondences_to_tensor<T: Real>(sets: &[&CorrespondenceSet]) -> Tensor<T> {
    let m = sets[0].len();
    let data: Vec<f64> = sets.iter().flat_map(|s| s.flatten()).collect();
    Tensor::from_f64(&[sets.len(), 3 * m], &data)
}

impl<T: Real> ImageToSsmNet<T> {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Sequential::new();
        let mut cin = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            encoder.push(Conv3d::new(&format!("enc{i}.conv"), cin, c, 3, 2, 1, 2f64.sqrt(), &mut rng));
            encoder.push(InstanceNorm3d::new(&format!("enc{i}.norm"), c));
            encoder.push(LeakyRelu::relu());
            cin = c;
        }
        let mut head = Sequential::new();
        head.push(Linear::new("fc1", config.flat_features(), config.hidden, 2f64.sqrt(), &mut rng));
        head.push(LeakyRelu::relu());
        // small bottleneck at init so the PCA-initialized decoder starts near the mean
        head.push(Linear::new("fc2", config.hidden, config.latent, 0.1, &mut rng));
        let decoder = Linear::new("decoder", config.latent, 3 * config.n_points, 1.0, &mut rng);
        Ok(Self {
            config,
            zscore: ZScore::new(),
            encoder,
            head,
            decoder,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let d = self.config.input_dims;
        let expected = [1, d[2], d[1], d[0]];
        if x.shape().len() != 5 || x.shape()[1..] != expected {
            return Err(Error::Dimension {
                what: "network input voxels per item",
                expected: d.iter().product(),
                found: x.item_len(),
            });
        }
        Ok(())
    }

    /// Batched forward pass on `[N, 1, z, y, x]` raw intensities.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<NetOutput<T>> {
        self.check_input(x)?;
        let h = self.zscore.forward(x);
        let h = self.encoder.forward(&h);
        let bottleneck = self.head.forward(&h);
        let correspondences = self.decoder.forward(&bottleneck);
        Ok(NetOutput {
            bottleneck,
            correspondences,
        })
    }

    /// Backward pass from gradients on the correspondences and, optionally,
    /// directly on the bottleneck. Returns the input gradient.
    pub fn backward(&mut self, grad_corr: &Tensor<T>, grad_bottleneck: Option<&Tensor<T>>) -> Tensor<T> {
        let mut g = self.decoder.backward(grad_corr);
        if let Some(gb) = grad_bottleneck {
            g.add_scaled(gb, T::one());
        }
        let g = self.head.backward(&g);
        let g = self.encoder.backward(&g);
        self.zscore.backward(&g)
    }

    /// [`Self::backward`] computing the input gradient only for the items
    /// flagged in `input_grad`; the others come back as zeros.
    pub fn backward_masked(
        &mut self,
        grad_corr: &Tensor<T>,
        grad_bottleneck: Option<&Tensor<T>>,
        input_grad: &[bool],
    ) -> Tensor<T> {
        self.encoder.set_input_grad_mask(Some(input_grad.to_vec()));
        let g = self.backward(grad_corr, grad_bottleneck);
        self.encoder.set_input_grad_mask(None);
        g
    }

    /// Single-volume inference.
    pub fn predict(&mut self, vol: &Volume) -> Result<(Vec<f64>, CorrespondenceSet)> {
        if vol.dims != self.config.input_dims {
            return Err(Error::Dimension {
                what: "volume voxel count",
                expected: self.config.input_dims.iter().product(),
                found: vol.len(),
            });
        }
        let out = self.forward(&volumes_to_tensor(&[vol]))?;
        let corr = CorrespondenceSet::from_flat(&out.correspondences.to_f64())?;
        Ok((out.bottleneck.to_f64(), corr))
    }

    /// Apply the decoder alone to a bottleneck vector.
    pub fn decode(&self, bottleneck: &[f64]) -> Result<Vec<f64>> {
        let l = self.config.latent;
        if bottleneck.len() != l {
            return Err(Error::Dimension {
                what: "bottleneck length",
                expected: l,
                found: bottleneck.len(),
            });
        }
        let w = self.decoder.weight.value.data();
        let b = self.decoder.bias.value.data();
        Ok((0..3 * self.config.n_points)
            .map(|r| {
                b[r].f64()
                    + w[r * l..(r + 1) * l]
                        .iter()
                        .zip(bottleneck)
                        .map(|(w, z)| w.f64() * z)
                        .sum::<f64>()
            })
            .collect())
    }

    /// Decoder columns `k < K` become `sqrt(eigenvalue_k) * component_k`,
    /// the rest zero; the bias becomes the mean shape.
    pub fn init_decoder_from_pca(&mut self, pca: &PcaModel) -> Result<()> {
        let (l, out) = (self.config.latent, 3 * self.config.n_points);
        if pca.dim() != out {
            return Err(Error::Dimension {
                what: "PCA dimension",
                expected: out,
                found: pca.dim(),
            });
        }
        if pca.n_components() > l {
            return Err(Error::Config(format!(
                "bottleneck width {l} is smaller than the {} PCA components",
                pca.n_components()
            )));
        }
        let mut w = vec![0.0; out * l];
        for (k, (c, lambda)) in pca.components.iter().zip(&pca.eigenvalues).enumerate() {
            let s = lambda.sqrt();
            for r in 0..out {
                w[r * l + k] = s * c[r];
            }
        }
        self.set_decoder(&w, &pca.mean)
    }

    /// Overwrite the decoder with a row-major `[3M, L]` weight and bias.
    pub fn set_decoder(&mut self, weight: &[f64], bias: &[f64]) -> Result<()> {
        let (l, out) = (self.config.latent, 3 * self.config.n_points);
        if weight.len() != out * l || bias.len() != out {
            return Err(Error::Dimension {
                what: "decoder weight entries",
                expected: out * l,
                found: weight.len(),
            });
        }
        self.decoder.weight.value = Tensor::from_f64(&[out, l], weight);
        self.decoder.bias.value = Tensor::from_f64(&[out], bias);
        Ok(())
    }

    /// Trainable parameters in a fixed order: encoder, head, decoder.
    pub fn parameters(&self) -> Vec<&Param<T>> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p.extend(self.decoder.params());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(CONFIG_FILE);
        let json = serde_json::to_string_pretty(&self.config).map_err(format_err(&path))?;
        fs::write(&path, json).map_err(io_err(&path))?;
        checkpoint::save_params(dir, &self.parameters())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let config: NetConfig = serde_json::from_str(&text).map_err(format_err(&path))?;
        let mut net = Self::new(config, 0)?;
        checkpoint::load_params(dir, net.parameters_mut())?;
        Ok(net)
    }
}

/// Copy of every parameter value, for restoring the best epoch.
pub fn snapshot<T: Real>(params: &[&Param<T>]) -> Vec<Tensor<T>> {
    params.iter().map(|p| p.value.clone()).collect()
}

pub fn restore<T: Real>(params: Vec<&mut Param<T>>, values: &[Tensor<T>]) {
    for (p, v) in params.into_iter().zip(values) {
        p.value = v.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::CorrespondenceSet;
    use crate::shape_space::{fit_pca, reconstruct_correspondences};
    use rand::Rng;

    fn tiny_config() -> NetConfig {
        NetConfig {
            input_dims: [8, 8, 8],
            channels: vec![2, 3],
            hidden: 6,
            latent: 4,
            n_points: 5,
        }
    }

    fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Volume::zeros(dims, 1.0);
        v.data.iter_mut().for_each(|x| *x = rng.gen_range(0.0..100.0));
        v
    }

    #[test]
    fn output_shapes_and_determinism() {
        let mut net = ImageToSsmNet::<f32>::new(tiny_config(), 1).unwrap();
        let vol = random_volume([8; 3], 2);
        let (b, c) = net.predict(&vol).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(c.len(), 5);
        let (b2, c2) = net.predict(&vol).unwrap();
        assert_eq!(b, b2);
        assert_eq!(c, c2);
        assert!(net.predict(&random_volume([8, 8, 7], 2)).is_err());
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        for cfg in [tiny_config(), NetConfig::new([48; 3], 128)] {
            let net = ImageToSsmNet::<f32>::new(cfg.clone(), 0).unwrap();
            let n: usize = net.parameters().iter().map(|p| p.value.len()).sum();
            assert_eq!(n, cfg.parameter_count());
            let names: Vec<_> = net.parameters().iter().map(|p| p.name.clone()).collect();
            let again: Vec<_> = net.parameters().iter().map(|p| p.name.clone()).collect();
            assert_eq!(names, again);
        }
    }

    #[test]
    fn pca_initialized_decoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shapes: Vec<CorrespondenceSet> = (0..4)
            .map(|_| CorrespondenceSet::new((0..5).map(|_| [0, 1, 2].map(|_| rng.gen_range(-3.0..3.0))).collect()))
            .collect();
        let pca = fit_pca(&shapes, 1.0).unwrap();
        let k = pca.n_components();
        let mut net = ImageToSsmNet::<f64>::new(tiny_config(), 0).unwrap();
        net.init_decoder_from_pca(&pca).unwrap();
        let zero = net.decode(&[0.0; 4]).unwrap();
        assert_eq!(zero, pca.mean);

        // decoder(e1 * s) - decoder(0) = s * sqrt(lambda_1) * component_1
        let s = 1.7;
        let mut e = vec![0.0; 4];
        e[0] = s;
        let d = net.decode(&e).unwrap();
        for r in 0..15 {
            let oracle = s * pca.eigenvalues[0].sqrt() * pca.components[0][r];
            assert!((d[r] - zero[r] - oracle).abs() < 1e-12);
        }

        // scores y -> bottleneck scores / sqrt(lambda) reproduces reconstruction
        let scores = pca.project(&shapes[1]).unwrap();
        let mut b = vec![0.0; 4];
        for i in 0..k {
            b[i] = scores[i] / pca.eigenvalues[i].sqrt();
        }
        let rec = reconstruct_correspondences(&pca, &scores).unwrap().flatten();
        for (x, y) in net.decode(&b).unwrap().iter().zip(&rec) {
            assert!((x - y).abs() < 1e-9);
        }

        let mut small = ImageToSsmNet::<f64>::new(NetConfig { latent: 2, ..tiny_config() }, 0).unwrap();
        assert!(small.init_decoder_from_pca(&pca).is_err());
    }

    #[test]
    fn decoder_is_affine_for_any_weights() {
        let net = ImageToSsmNet::<f64>::new(tiny_config(), 9).unwrap();
        let a = [0.3, -1.0, 2.0, 0.5];
        let b = [1.1, 0.2, -0.7, 3.0];
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs: Vec<f64> = net
            .decode(&ab)
            .unwrap()
            .iter()
            .zip(net.decode(&[0.0; 4]).unwrap())
            .map(|(x, y)| x + y)
            .collect();
        let rhs: Vec<f64> = net
            .decode(&a)
            .unwrap()
            .iter()
            .zip(net.decode(&b).unwrap())
            .map(|(x, y)| x + y)
            .collect();
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut net = ImageToSsmNet::<f64>::new(tiny_config(), 4).unwrap();
        let x = volumes_to_tensor::<f64>(&[&random_volume([8; 3], 5), &random_volume([8; 3], 6)]);
        let target: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |net: &mut ImageToSsmNet<f64>| -> f64 {
            let out = net.forward(&x).unwrap();
            out.correspondences
                .data()
                .iter()
                .zip(&target)
                .map(|(p, t)| 0.5 * (p - t).powi(2))
                .sum::<f64>()
                + 0.5 * out.bottleneck.data().iter().map(|b| b * b).sum::<f64>()
        };
        let out = net.forward(&x).unwrap();
        let gc: Vec<f64> = out.correspondences.data().iter().zip(&target).map(|(p, t)| p - t).collect();
        net.backward(
            &Tensor::from_vec(out.correspondences.shape(), gc),
            Some(&out.bottleneck.clone()),
        );
        let analytic: Vec<Vec<f64>> = net.parameters().iter().map(|p| p.grad.to_f64()).collect();
        let h = 1e-3;
        let n_params = net.parameters().len();
        for pi in 0..n_params {
            let len = net.parameters()[pi].value.len();
            for idx in [0, len / 2, len - 1] {
                let orig = net.parameters()[pi].value.data()[idx];
                net.parameters_mut()[pi].value.data_mut()[idx] = orig + h;
                let fp = loss(&mut net);
                net.parameters_mut()[pi].value.data_mut()[idx] = orig - h;
                let fm = loss(&mut net);
                net.parameters_mut()[pi].value.data_mut()[idx] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let a = analytic[pi][idx];
                assert!(
                    (fd - a).abs() <= 1e-3 * fd.abs().max(a.abs()).max(1e-2),
                    "{} [{idx}]: fd {fd} analytic {a}",
                    net.parameters()[pi].name
                );
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = ImageToSsmNet::<f32>::new(tiny_config(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        net.save(dir.path()).unwrap();
        let back = ImageToSsmNet::<f32>::load(dir.path()).unwrap();
        assert_eq!(back.config(), net.config());
        for (a, b) in back.parameters().iter().zip(net.parameters()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }
}
