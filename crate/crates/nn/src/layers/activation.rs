use super::{take_cache, Layer};
use crate::real::Real;
use crate::tensor::Tensor;

/// `max(x, slope * x)`; `slope = 0` gives a plain ReLU.
pub struct LeakyRelu<T> {
    slope: T,
    input: Option<Tensor<T>>,
}

impl<T: Real> LeakyRelu<T> {
    pub fn new(slope: f64) -> Self {
        Self {
            slope: T::of(slope),
            input: None,
        }
    }

    pub fn relu() -> Self {
        Self::new(0.0)
    }
}

impl<T: Real> Layer<T> for LeakyRelu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let s = self.slope;
        let data = x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * s })
            .collect();
        self.input = Some(x.clone());
        Tensor::from_vec(x.shape(), data)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = take_cache(&mut self.input, "LeakyRelu");
        let s = self.slope;
        let data = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { g * s })
            .collect();
        Tensor::from_vec(x.shape(), data)
    }
}

#[derive(Default)]
pub struct Tanh<T> {
    output: Option<Tensor<T>>,
}

impl<T: Real> Tanh<T> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl<T: Real> Layer<T> for Tanh<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = Tensor::from_vec(x.shape(), x.data().iter().map(|v| v.tanh()).collect());
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let y = take_cache(&mut self.output, "Tanh");
        let data = y
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&y, &g)| g * (T::one() - y * y))
            .collect();
        Tensor::from_vec(y.shape(), data)
    }
}

#[derive(Default)]
pub struct Sigmoid<T> {
    output: Option<Tensor<T>>,
}

impl<T: Real> Sigmoid<T> {
    pub fn new() -> Self {
        Self { output: None }
    }
}

impl<T: Real> Layer<T> for Sigmoid<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let data = x
            .data()
            .iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect();
        let y = Tensor::from_vec(x.shape(), data);
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let y = take_cache(&mut self.output, "Sigmoid");
        let data = y
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&y, &g)| g * y * (T::one() - y))
            .collect();
        Tensor::from_vec(y.shape(), data)
    }
}
