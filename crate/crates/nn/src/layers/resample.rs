use super::{take_cache, Layer};
use crate::real::Real;
use crate::tensor::Tensor;

/// Nearest-neighbour 2x upsampling of `[N, C, D, H, W]` volumes.
#[derive(Default)]
pub struct Upsample2x {
    input_shape: Option<Vec<usize>>,
}

impl Upsample2x {
    pub fn new() -> Self {
        Self { input_shape: None }
    }
}

impl<T: Real> Layer<T> for Upsample2x {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let s = x.shape();
        let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let mut out = Tensor::zeros(&[n, c, 2 * d, 2 * h, 2 * w]);
        let src = x.data();
        let dst = out.data_mut();
        for nc in 0..n * c {
            for z in 0..2 * d {
                for y in 0..2 * h {
                    let srow = &src[((nc * d + z / 2) * h + y / 2) * w..];
                    let drow = &mut dst[((nc * 2 * d + z) * 2 * h + y) * 2 * w..];
                    for xx in 0..2 * w {
                        drow[xx] = srow[xx / 2];
                    }
                }
            }
        }
        self.input_shape = Some(s.to_vec());
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let s = take_cache(&mut self.input_shape, "Upsample2x");
        let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let mut dx = Tensor::zeros(&s);
        let src = grad.data();
        let dst = dx.data_mut();
        for nc in 0..n * c {
            for z in 0..2 * d {
                for y in 0..2 * h {
                    let grow = &src[((nc * 2 * d + z) * 2 * h + y) * 2 * w..];
                    let drow = &mut dst[((nc * d + z / 2) * h + y / 2) * w..];
                    for xx in 0..2 * w {
                        drow[xx / 2] += grow[xx];
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_replicates_and_backward_sums_blocks() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1, 2], vec![1.0, 2.0]);
        let mut up = Upsample2x::new();
        let y = up.forward(&x);
        assert_eq!(y.shape(), &[1, 1, 2, 2, 4]);
        assert_eq!(&y.data()[..4], &[1., 1., 2., 2.]);
        let dx = Layer::<f64>::backward(&mut up, &Tensor::full(y.shape(), 1.0));
        assert_eq!(dx.data(), &[8., 8.]);
    }
}
