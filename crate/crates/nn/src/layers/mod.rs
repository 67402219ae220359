//! Layers with cached forward state and explicit backward passes.
//!
//! Every layer accepts a batch and treats batch items independently, so the
//! same network can process clean and augmented volumes in one forward pass
//! and receive all of their gradients in one backward pass.

mod activation;
mod conv;
mod linear;
mod norm;
mod resample;

pub use activation::{LeakyRelu, Sigmoid, Tanh};
pub use conv::{conv_output_len, Conv3d};
pub use linear::Linear;
pub use norm::{InstanceNorm3d, ZScore};
pub use resample::Upsample2x;

use crate::real::Real;
use crate::tensor::Tensor;

/// A trainable array and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

pub trait Layer<T: Real>: Send {
    /// Forward pass; caches whatever the backward pass needs.
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T>;

    /// Accumulates parameter gradients and returns the input gradient.
    ///
    /// Panics when called without a preceding `forward`.
    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T>;

    /// Restricts input gradients to the batch items flagged `true` until
    /// reset with `None`; the others come back as zeros. Parameter gradients
    /// are unaffected. Layers whose input gradient is cheap may ignore it.
    fn set_input_grad_mask(&mut self, _mask: Option<Vec<bool>>) {}

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential<T> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut out = x.clone();
        for layer in &mut self.layers {
            out = layer.forward(&out);
        }
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    /// Applied up to and including the first layer with parameters: later
    /// layers must pass full gradients back to it.
    fn set_input_grad_mask(&mut self, mask: Option<Vec<bool>>) {
        for layer in &mut self.layers {
            layer.set_input_grad_mask(mask.clone());
            if !layer.params().is_empty() {
                break;
            }
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

pub(crate) fn take_cache<C>(cache: &mut Option<C>, layer: &str) -> C {
    cache
        .take()
        .unwrap_or_else(|| panic!("{layer}: backward called without forward"))
}
