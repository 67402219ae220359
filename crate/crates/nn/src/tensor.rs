use crate::real::Real;

/// Dense row-major tensor. Volumetric batches use `[N, C, D, H, W]` with `W`
/// fastest; feature batches use `[N, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements in one batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self, i: usize) -> &[T] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.item_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape size mismatch");
        self.shape = shape.to_vec();
        self
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Tensor<T>, factor: T) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate along the batch dimension.
    pub fn cat_batch(parts: &[&Tensor<T>]) -> Self {
        assert!(!parts.is_empty(), "cat_batch of nothing");
        let tail = &parts[0].shape[1..];
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut n = 0;
        for p in parts {
            assert_eq!(&p.shape[1..], tail, "cat_batch item shape mismatch");
            data.extend_from_slice(&p.data);
            n += p.shape[0];
        }
        let mut shape = vec![n];
        shape.extend_from_slice(tail);
        Self { shape, data }
    }

    /// Rows `start..end` of the batch dimension.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let n = self.item_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self {
            shape,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    /// Concatenate two `[N, C, ...]` tensors along the channel axis.
    pub fn cat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Self {
        assert_eq!(a.shape[0], b.shape[0], "cat_channels batch mismatch");
        assert_eq!(a.shape[2..], b.shape[2..], "cat_channels spatial mismatch");
        let (ia, ib) = (a.item_len(), b.item_len());
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..a.shape[0] {
            data.extend_from_slice(a.item(i));
            data.extend_from_slice(b.item(i));
        }
        let mut shape = a.shape.clone();
        shape[1] += b.shape[1];
        debug_assert_eq!(data.len(), a.shape[0] * (ia + ib));
        Self { shape, data }
    }

    /// Inverse of [`Tensor::cat_channels`]: split off the first `ca` channels.
    pub fn split_channels(&self, ca: usize) -> (Self, Self) {
        let spatial: usize = self.shape[2..].iter().product();
        let cb = self.shape[1] - ca;
        let mut a = Vec::with_capacity(self.shape[0] * ca * spatial);
        let mut b = Vec::with_capacity(self.shape[0] * cb * spatial);
        for i in 0..self.shape[0] {
            let item = self.item(i);
            a.extend_from_slice(&item[..ca * spatial]);
            b.extend_from_slice(&item[ca * spatial..]);
        }
        let mut sa = self.shape.clone();
        sa[1] = ca;
        let mut sb = self.shape.clone();
        sb[1] = cb;
        (Self::from_vec(&sa, a), Self::from_vec(&sb, b))
    }
}

impl<T: Real> std::ops::Add for &Tensor<T> {
    type Output = Tensor<T>;
    fn add(self, rhs: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape, rhs.shape, "add shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_split_inverts_cat() {
        let a = Tensor::<f64>::from_vec(&[2, 1, 2], vec![1., 2., 3., 4.]);
        let b = Tensor::<f64>::from_vec(&[2, 2, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]);
        let c = Tensor::cat_channels(&a, &b);
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.item(1), &[3., 4., 9., 10., 11., 12.]);
        let (a2, b2) = c.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn batch_cat_and_slice() {
        let a = Tensor::<f32>::from_vec(&[1, 2], vec![1., 2.]);
        let b = Tensor::<f32>::from_vec(&[2, 2], vec![3., 4., 5., 6.]);
        let c = Tensor::cat_batch(&[&a, &b]);
        assert_eq!(c.shape(), &[3, 2]);
        assert_eq!(c.slice_batch(1, 3), b);
    }
}
