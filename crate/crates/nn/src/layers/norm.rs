use super::{take_cache, Layer, Param};
use crate::real::Real;
use crate::tensor::Tensor;

struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<f64>,
}

/// Standardize each contiguous group of `group_len` values; returns `xhat` and
/// the per-group inverse standard deviations.
fn standardize<T: Real>(x: &Tensor<T>, group_len: usize, eps: f64) -> NormCache<T> {
    let mut xhat = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(x.len() / group_len);
    for (src, dst) in x
        .data()
        .chunks(group_len)
        .zip(xhat.data_mut().chunks_mut(group_len))
    {
        let n = src.len() as f64;
        let mean = src.iter().map(|v| v.f64()).sum::<f64>() / n;
        let var = src.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / n;
        let istd = 1.0 / (var + eps).sqrt();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = T::of((s.f64() - mean) * istd);
        }
        inv_std.push(istd);
    }
    NormCache { xhat, inv_std }
}

/// Gradient of standardization given the gradient w.r.t. `xhat`.
fn standardize_backward<T: Real>(cache: &NormCache<T>, dxhat: &[T], group_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dxhat.len()];
    for (((g, xh), out), &istd) in dxhat
        .chunks(group_len)
        .zip(cache.xhat.data().chunks(group_len))
        .zip(dx.chunks_mut(group_len))
        .zip(&cache.inv_std)
    {
        let n = g.len() as f64;
        let sum_g: f64 = g.iter().map(|v| v.f64()).sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a.f64() * b.f64()).sum();
        for ((o, gi), xi) in out.iter_mut().zip(g).zip(xh) {
            *o = T::of(istd * (gi.f64() - sum_g / n - xi.f64() * sum_gx / n));
        }
    }
    dx
}

/// Per-item, per-channel normalization over the spatial axes, with a learned
/// scale and shift per channel.
pub struct InstanceNorm3d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    channels: usize,
    eps: f64,
    cache: Option<NormCache<T>>,
}

impl<T: Real> InstanceNorm3d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            channels,
            eps: 1e-5,
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for InstanceNorm3d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.shape()[1], self.channels, "InstanceNorm3d channel mismatch");
        let spatial: usize = x.shape()[2..].iter().product();
        let cache = standardize(x, spatial, self.eps);
        let mut y = cache.xhat.clone();
        for (i, chunk) in y.data_mut().chunks_mut(spatial).enumerate() {
            let c = i % self.channels;
            let (g, b) = (self.gamma.value.data()[c], self.beta.value.data()[c]);
            chunk.iter_mut().for_each(|v| *v = *v * g + b);
        }
        self.cache = Some(cache);
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let cache = take_cache(&mut self.cache, "InstanceNorm3d");
        let spatial: usize = grad.shape()[2..].iter().product();
        let mut dxhat = grad.clone();
        for (i, (gchunk, xchunk)) in grad
            .data()
            .chunks(spatial)
            .zip(cache.xhat.data().chunks(spatial))
            .enumerate()
        {
            let c = i % self.channels;
            let mut dg = 0.0;
            let mut db = 0.0;
            for (g, x) in gchunk.iter().zip(xchunk) {
                dg += g.f64() * x.f64();
                db += g.f64();
            }
            self.gamma.grad.data_mut()[c] += T::of(dg);
            self.beta.grad.data_mut()[c] += T::of(db);
            let gamma = self.gamma.value.data()[c];
            dxhat.data_mut()[i * spatial..(i + 1) * spatial]
                .iter_mut()
                .for_each(|v| *v *= gamma);
        }
        Tensor::from_vec(grad.shape(), standardize_backward(&cache, dxhat.data(), spatial))
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Per-item z-score over all channels and voxels (no learned parameters).
pub struct ZScore<T> {
    eps: f64,
    cache: Option<NormCache<T>>,
}

impl<T: Real> Default for ZScore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ZScore<T> {
    pub fn new() -> Self {
        Self {
            eps: 1e-5,
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for ZScore<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let cache = standardize(x, x.item_len(), self.eps);
        let y = cache.xhat.clone();
        self.cache = Some(cache);
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let cache = take_cache(&mut self.cache, "ZScore");
        Tensor::from_vec(
            grad.shape(),
            standardize_backward(&cache, grad.data(), grad.item_len()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_fd<L: Layer<f64>>(layer: &mut L, x: &Tensor<f64>) {
        let y = layer.forward(x);
        let up: Vec<f64> = (0..y.len()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let dx = layer.backward(&Tensor::from_vec(y.shape(), up.clone()));
        let eps = 1e-6;
        for idx in 0..x.len() {
            let f = |l: &mut L, v: f64| {
                let mut xx = x.clone();
                xx.data_mut()[idx] = v;
                let y = l.forward(&xx);
                y.data().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
            };
            let x0 = x.data()[idx];
            let fd = (f(layer, x0 + eps) - f(layer, x0 - eps)) / (2.0 * eps);
            assert!((fd - dx.data()[idx]).abs() < 1e-6, "idx {idx}: {fd} vs {}", dx.data()[idx]);
        }
    }

    fn sample() -> Tensor<f64> {
        Tensor::from_vec(
            &[2, 2, 1, 2, 3],
            (0..24).map(|i| ((i as f64) * 1.3).sin() * 2.0 + 0.5).collect(),
        )
    }

    #[test]
    fn instance_norm_gradients() {
        let mut n = InstanceNorm3d::<f64>::new("n", 2);
        n.gamma.value.data_mut().copy_from_slice(&[1.5, -0.7]);
        check_fd(&mut n, &sample());
    }

    #[test]
    fn zscore_output_is_standardized_and_differentiable() {
        let mut z = ZScore::<f64>::new();
        let y = z.forward(&sample());
        for i in 0..2 {
            let item = y.item(i);
            let mean: f64 = item.iter().sum::<f64>() / 12.0;
            let var: f64 = item.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
        check_fd(&mut z, &sample());
    }
}
