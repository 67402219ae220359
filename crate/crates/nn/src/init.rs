use rand::Rng;

use crate::real::Real;
use crate::tensor::Tensor;

/// Uniform init with bound `gain * sqrt(6 / fan_in)`.
pub fn he_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<T> {
    let bound = gain * (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if bound > 0.0 {
                T::of(rng.gen_range(-bound..bound))
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}
