use rand::Rng;

use super::{take_cache, Layer, Param};
use crate::init;
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Affine map applied to each batch item flattened to a vector.
///
/// The output is `[N, out]`; the backward pass restores the input's shape.
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_features: usize,
    out_features: usize,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_features: usize,
        out_features: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                init::he_uniform(&[out_features, in_features], in_features, gain, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_features])),
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }
}

impl<T: Real> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        assert_eq!(x.item_len(), self.in_features, "Linear input width mismatch");
        let mut y = Tensor::zeros(&[n, self.out_features]);
        for i in 0..n {
            y.item_mut(i).copy_from_slice(self.bias.value.data());
        }
        gemm(
            false,
            true,
            n,
            self.out_features,
            self.in_features,
            T::one(),
            x.data(),
            self.weight.value.data(),
            T::one(),
            y.data_mut(),
        );
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = take_cache(&mut self.input, "Linear");
        let n = x.batch();
        gemm(
            true,
            false,
            self.out_features,
            self.in_features,
            n,
            T::one(),
            grad.data(),
            x.data(),
            T::one(),
            self.weight.grad.data_mut(),
        );
        for i in 0..n {
            for (b, &g) in self.bias.grad.data_mut().iter_mut().zip(grad.item(i)) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            false,
            false,
            n,
            self.in_features,
            self.out_features,
            T::one(),
            grad.data(),
            self.weight.value.data(),
            T::zero(),
            dx.data_mut(),
        );
        dx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_and_backward_match_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::<f64>::new("l", 3, 2, 1.0, &mut rng);
        lin.weight.value.data_mut().copy_from_slice(&[1., 2., 3., -1., 0., 1.]);
        lin.bias.value.data_mut().copy_from_slice(&[0.5, -0.5]);
        let x = Tensor::from_vec(&[2, 1, 3], vec![1., 1., 1., 0., 2., -1.]);
        let y = lin.forward(&x);
        assert_eq!(y.data(), &[6.5, -0.5, 1.5, -1.5]);
        let dx = lin.backward(&Tensor::from_vec(&[2, 2], vec![1., 0., 0., 1.]));
        assert_eq!(dx.shape(), &[2, 1, 3]);
        assert_eq!(dx.data(), &[1., 2., 3., -1., 0., 1.]);
        assert_eq!(lin.weight.grad.data(), &[1., 1., 1., 0., 2., -1.]);
        assert_eq!(lin.bias.grad.data(), &[1., 1.]);
    }
}
