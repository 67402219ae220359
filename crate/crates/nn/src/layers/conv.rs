use rand::Rng;

use super::{take_cache, Layer, Param};
use crate::init;
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// 3D convolution with cubic kernel, symmetric zero padding and uniform stride.
///
/// Strided convolutions use im2col + GEMM; stride 1 runs directly on a
/// zero-padded copy of the input.
pub struct Conv3d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    input: Option<Tensor<T>>,
    input_grad_mask: Option<Vec<bool>>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dims: [usize; 3],
    out: [usize; 3],
}

impl Geometry {
    fn out_len(&self) -> usize {
        self.out.iter().product()
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    /// Output indices `o` along one axis whose input index `o * stride + kk - pad`
    /// falls inside `0..n`.
    fn valid(&self, kk: usize, n: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let off = kk as isize - p;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= n-1
        let hi_incl = (n as isize - 1 - off).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out as isize);
        (lo.min(out as isize) as usize, hi.max(lo.min(out as isize)) as usize)
    }
}

pub fn conv_output_len(n: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (n + 2 * padding - kernel) / stride + 1
}

fn im2col<T: Real>(g: &Geometry, x: &[T], col: &mut [T]) {
    let [d, h, w] = g.dims;
    let [od, oh, ow] = g.out;
    let p = g.out_len();
    let s = g.stride;
    col.fill(T::zero());
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..g.k {
            let (z0, z1) = g.valid(kz, d, od);
            for ky in 0..g.k {
                let (y0, y1) = g.valid(ky, h, oh);
                for kx in 0..g.k {
                    let (x0, x1) = g.valid(kx, w, ow);
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oz in z0..z1 {
                        let iz = oz * s + kz - g.pad;
                        for oy in y0..y1 {
                            let iy = oy * s + ky - g.pad;
                            let src = &xc[(iz * h + iy) * w..];
                            let out_row = &mut dst[(oz * oh + oy) * ow..];
                            for ox in x0..x1 {
                                out_row[ox] = src[ox * s + kx - g.pad];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &Geometry, col: &[T], dx: &mut [T]) {
    let [d, h, w] = g.dims;
    let [od, oh, ow] = g.out;
    let p = g.out_len();
    let s = g.stride;
    let mut row = 0;
    for c in 0..g.cin {
        let dxc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
        for kz in 0..g.k {
            let (z0, z1) = g.valid(kz, d, od);
            for ky in 0..g.k {
                let (y0, y1) = g.valid(ky, h, oh);
                for kx in 0..g.k {
                    let (x0, x1) = g.valid(kx, w, ow);
                    let src = &col[row * p..(row + 1) * p];
                    for oz in z0..z1 {
                        let iz = oz * s + kz - g.pad;
                        for oy in y0..y1 {
                            let iy = oy * s + ky - g.pad;
                            let dst = &mut dxc[(iz * h + iy) * w..];
                            let in_row = &src[(oz * oh + oy) * ow..];
                            for ox in x0..x1 {
                                dst[ox * s + kx - g.pad] += in_row[ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}


/// Zero-padded copy of every channel, so that for stride 1 each kernel offset
/// becomes a single contiguous shift over the padded volume.
struct Padded {
    dims: [usize; 3],
    /// Span of anchor indices covering every output voxel.
    span: usize,
}

impl Padded {
    fn new(g: &Geometry) -> Self {
        let dims = g.dims.map(|n| n + 2 * g.pad);
        let [_, ph, pw] = dims;
        let [od, oh, ow] = g.out;
        Self {
            dims,
            span: ((od - 1) * ph + (oh - 1)) * pw + ow,
        }
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn offset(&self, kz: usize, ky: usize, kx: usize) -> usize {
        (kz * self.dims[1] + ky) * self.dims[2] + kx
    }

    /// Copy `src` (dims `inner`) into the interior of `dst`, shifted by `pad`.
    fn embed<T: Copy>(&self, inner: [usize; 3], pad: usize, src: &[T], dst: &mut [T]) {
        let [d, h, w] = inner;
        for z in 0..d {
            for y in 0..h {
                let o = ((z + pad) * self.dims[1] + y + pad) * self.dims[2] + pad;
                dst[o..o + w].copy_from_slice(&src[(z * h + y) * w..(z * h + y + 1) * w]);
            }
        }
    }

    /// Inverse of `embed`: gather the `inner` block at `pad` from `src`.
    fn extract<T: Copy>(&self, inner: [usize; 3], pad: usize, src: &[T], dst: &mut [T]) {
        let [d, h, w] = inner;
        for z in 0..d {
            for y in 0..h {
                let o = ((z + pad) * self.dims[1] + y + pad) * self.dims[2] + pad;
                dst[(z * h + y) * w..(z * h + y + 1) * w].copy_from_slice(&src[o..o + w]);
            }
        }
    }
}

/// Dot product with independent lanes so the loop vectorizes.
#[inline(always)]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ac.remainder().iter().zip(bc.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}

#[inline(always)]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

impl<T: Real> Conv3d<T> {
    fn pad_input(&self, g: &Geometry, pg: &Padded, x: &[T]) -> Vec<T> {
        let vol = g.dims.iter().product::<usize>();
        let plen = pg.len();
        let mut xp = vec![T::zero(); g.cin * plen];
        for ci in 0..g.cin {
            pg.embed(g.dims, g.pad, &x[ci * vol..(ci + 1) * vol], &mut xp[ci * plen..(ci + 1) * plen]);
        }
        xp
    }

    // The direct kernels are compiled a second time with AVX2 enabled and
    // picked at run time. Without FMA contraction the wider lanes perform
    // the same operations in the same order, so results are bit-identical.
    fn forward_direct(&self, g: &Geometry, x: &[T], y: &mut [T]) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 support was just checked.
            return unsafe { self.forward_direct_avx2(g, x, y) };
        }
        self.forward_direct_body(g, x, y)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn forward_direct_avx2(&self, g: &Geometry, x: &[T], y: &mut [T]) {
        self.forward_direct_body(g, x, y)
    }

    fn backward_direct(&mut self, g: &Geometry, x: &[T], dy: &[T], dx: Option<&mut [T]>) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: AVX2 support was just checked.
            return unsafe { self.backward_direct_avx2(g, x, dy, dx) };
        }
        self.backward_direct_body(g, x, dy, dx)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn backward_direct_avx2(&mut self, g: &Geometry, x: &[T], dy: &[T], dx: Option<&mut [T]>) {
        self.backward_direct_body(g, x, dy, dx)
    }

    #[inline(always)]
    fn forward_direct_body(&self, g: &Geometry, x: &[T], y: &mut [T]) {
        let pg = Padded::new(g);
        let (plen, span, p, k) = (pg.len(), pg.span, g.out_len(), self.kernel);
        let xp = self.pad_input(g, &pg, x);
        let wt = self.weight.value.data();
        let mut acc = vec![T::zero(); span];
        for co in 0..self.out_channels {
            acc.fill(self.bias.value.data()[co]);
            for ci in 0..g.cin {
                let xc = &xp[ci * plen..(ci + 1) * plen];
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = wt[(((co * g.cin + ci) * k + kz) * k + ky) * k + kx];
                            let off = pg.offset(kz, ky, kx);
                            axpy(wv, &xc[off..off + span], &mut acc);
                        }
                    }
                }
            }
            acc.resize(plen, T::zero());
            pg.extract(g.out, 0, &acc, &mut y[co * p..(co + 1) * p]);
            acc.truncate(span);
        }
    }

    #[inline(always)]
    fn backward_direct_body(&mut self, g: &Geometry, x: &[T], dy: &[T], dx: Option<&mut [T]>) {
        let pg = Padded::new(g);
        let (plen, span, p, k) = (pg.len(), pg.span, g.out_len(), self.kernel);
        let vol = g.dims.iter().product::<usize>();
        let xp = self.pad_input(g, &pg, x);
        let want_dx = dx.is_some();
        let mut dxp = vec![T::zero(); if want_dx { g.cin * plen } else { 0 }];
        let mut dyp = vec![T::zero(); plen];
        for co in 0..self.out_channels {
            let dyc = &dy[co * p..(co + 1) * p];
            self.bias.grad.data_mut()[co] += dyc.iter().copied().sum::<T>();
            // output laid out on the padded grid; gaps between rows stay zero
            pg.embed(g.out, 0, dyc, &mut dyp);
            let dys = &dyp[..span];
            for ci in 0..g.cin {
                let xc = &xp[ci * plen..(ci + 1) * plen];
                let dxc = if want_dx { &mut dxp[ci * plen..(ci + 1) * plen] } else { &mut [][..] };
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wi = (((co * g.cin + ci) * k + kz) * k + ky) * k + kx;
                            let off = pg.offset(kz, ky, kx);
                            if want_dx {
                                axpy(self.weight.value.data()[wi], dys, &mut dxc[off..off + span]);
                            }
                            self.weight.grad.data_mut()[wi] += dot(dys, &xc[off..off + span]);
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx {
            for ci in 0..g.cin {
                pg.extract(g.dims, g.pad, &dxp[ci * plen..(ci + 1) * plen], &mut dx[ci * vol..(ci + 1) * vol]);
            }
        }
    }
}

impl<T: Real> Conv3d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.pow(3);
        let shape = [out_channels, in_channels, kernel, kernel, kernel];
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                init::he_uniform(&shape, fan_in, gain, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input: None,
            input_grad_mask: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        dims.map(|n| conv_output_len(n, self.kernel, self.stride, self.padding))
    }

    fn geometry(&self, x: &Tensor<T>) -> Geometry {
        let s = x.shape();
        assert_eq!(s.len(), 5, "Conv3d expects [N, C, D, H, W]");
        assert_eq!(s[1], self.in_channels, "Conv3d channel mismatch");
        let dims = [s[2], s[3], s[4]];
        Geometry {
            cin: self.in_channels,
            k: self.kernel,
            stride: self.stride,
            pad: self.padding,
            dims,
            out: self.output_dims(dims),
        }
    }
}

impl<T: Real> Layer<T> for Conv3d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let g = self.geometry(x);
        let n = x.batch();
        let p = g.out_len();
        let rows = g.rows();
        let mut out = Tensor::zeros(&[n, self.out_channels, g.out[0], g.out[1], g.out[2]]);
        if self.stride == 1 {
            for i in 0..n {
                self.forward_direct(&g, x.item(i), out.item_mut(i));
            }
            self.input = Some(x.clone());
            return out;
        }
        let mut col = vec![T::zero(); rows * p];
        for i in 0..n {
            im2col(&g, x.item(i), &mut col);
            let y = out.item_mut(i);
            for (co, &b) in self.bias.value.data().iter().enumerate() {
                y[co * p..(co + 1) * p].fill(b);
            }
            gemm(
                false,
                false,
                self.out_channels,
                p,
                rows,
                T::one(),
                self.weight.value.data(),
                &col,
                T::one(),
                y,
            );
        }
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = take_cache(&mut self.input, "Conv3d");
        let g = self.geometry(&x);
        let p = g.out_len();
        let rows = g.rows();
        let mut dx = Tensor::zeros(x.shape());
        let mask = self.input_grad_mask.clone();
        let wants = |i: usize| mask.as_ref().is_none_or(|m| m.get(i).copied().unwrap_or(true));
        if self.stride == 1 {
            for i in 0..x.batch() {
                let dxi = if wants(i) { Some(dx.item_mut(i)) } else { None };
                self.backward_direct(&g, x.item(i), grad.item(i), dxi);
            }
            return dx;
        }
        let mut col = vec![T::zero(); rows * p];
        let mut dcol = vec![T::zero(); rows * p];
        for i in 0..x.batch() {
            let dy = grad.item(i);
            im2col(&g, x.item(i), &mut col);
            // dW += dY * col^T
            gemm(
                false,
                true,
                self.out_channels,
                rows,
                p,
                T::one(),
                dy,
                &col,
                T::one(),
                self.weight.grad.data_mut(),
            );
            for (co, db) in self.bias.grad.data_mut().iter_mut().enumerate() {
                *db += dy[co * p..(co + 1) * p].iter().copied().sum::<T>();
            }
            if !wants(i) {
                continue;
            }
            // dcol = W^T * dY
            gemm(
                true,
                false,
                rows,
                p,
                self.out_channels,
                T::one(),
                self.weight.value.data(),
                dy,
                T::zero(),
                &mut dcol,
            );
            col2im(&g, &dcol, dx.item_mut(i));
        }
        dx
    }

    fn set_input_grad_mask(&mut self, mask: Option<Vec<bool>>) {
        self.input_grad_mask = mask;
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

    /// Direct-loop convolution used as an oracle.
    fn naive_conv(conv: &Conv3d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let s = x.shape();
        let (n, cin, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let k = conv.kernel;
        let [od, oh, ow] = conv.output_dims([d, h, w]);
        let cout = conv.out_channels;
        let wt = conv.weight.value.data();
        let mut out = Tensor::zeros(&[n, cout, od, oh, ow]);
        for b in 0..n {
            for co in 0..cout {
                for oz in 0..od {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = conv.bias.value.data()[co];
                            for ci in 0..cin {
                                for kz in 0..k {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let iz = (oz * conv.stride + kz) as isize - conv.padding as isize;
                                            let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                            let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                            if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= w as isize {
                                                continue;
                                            }
                                            let xi = (((b * cin + ci) * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                            let wi = (((co * cin + ci) * k + kz) * k + ky) * k + kx;
                                            acc += wt[wi] * x.data()[xi];
                                        }
                                    }
                                }
                            }
                            out.data_mut()[(((b * cout + co) * od + oz) * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn forward_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(stride, pad, dims) in &[(1, 1, [4, 5, 3]), (1, 0, [5, 4, 6]), (2, 1, [5, 4, 6]), (2, 0, [5, 5, 5])] {
            let mut conv = Conv3d::<f64>::new("c", 2, 3, 3, stride, pad, 1.0, &mut rng);
            conv.bias.value.data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
            let x = random_input(&[2, 2, dims[0], dims[1], dims[2]], 9);
            let got = conv.forward(&x);
            let want = naive_conv(&conv, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for stride in [1, 2] {
        let mut conv = Conv3d::<f64>::new("c", 2, 2, 3, stride, 1, 1.0, &mut rng);
        let x = random_input(&[2, 2, 5, 4, 4], 11);
        let y = conv.forward(&x);
        let upstream = random_input(y.shape(), 12);
        let dx = conv.backward(&upstream);
        let loss = |conv: &mut Conv3d<f64>, x: &Tensor<f64>| -> f64 {
            let y = conv.forward(x);
            y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for idx in [0, 7, 33, 101, 150] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&mut conv, &xp) - loss(&mut conv, &xm)) / (2.0 * eps);
            assert!((fd - dx.data()[idx]).abs() < 1e-7, "dx[{idx}] {fd} vs {}", dx.data()[idx]);
        }
        let dw = conv.weight.grad.clone();
        for idx in [0, 13, 50, 107] {
            let orig = conv.weight.value.data()[idx];
            conv.weight.value.data_mut()[idx] = orig + eps;
            let lp = loss(&mut conv, &x);
            conv.weight.value.data_mut()[idx] = orig - eps;
            let lm = loss(&mut conv, &x);
            conv.weight.value.data_mut()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - dw.data()[idx]).abs() < 1e-7);
        }
        let db: f64 = upstream.data()[..upstream.item_len() / 2].iter().sum::<f64>()
            + upstream.data()[upstream.item_len()..upstream.item_len() * 3 / 2].iter().sum::<f64>();
        assert!((conv.bias.grad.data()[0] - db).abs() < 1e-10);
        }
    }

    #[test]
    fn masked_input_gradients_leave_the_rest_unchanged() {
        use crate::layers::{LeakyRelu, Sequential, ZScore};
        for stride in [1, 2] {
            let build = || {
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                let mut net = Sequential::<f64>::new();
                net.push(ZScore::new());
                net.push(Conv3d::new("a", 1, 2, 3, stride, 1, 1.0, &mut rng));
                net.push(LeakyRelu::relu());
                net.push(Conv3d::new("b", 2, 2, 3, 1, 1, 1.0, &mut rng));
                net
            };
            let x = random_input(&[3, 1, 6, 5, 4], 21);
            let (mut full, mut masked) = (build(), build());
            let upstream = random_input(full.forward(&x).shape(), 22);
            let dx_full = full.backward(&upstream);
            masked.set_input_grad_mask(Some(vec![false, true, false]));
            masked.forward(&x);
            let dx = masked.backward(&upstream);
            for (a, b) in full.params().iter().zip(masked.params()) {
                assert_eq!(a.grad.data(), b.grad.data(), "{}", a.name);
            }
            assert_eq!(dx.item(1), dx_full.item(1));
            assert!(dx.item(0).iter().chain(dx.item(2)).all(|&v| v == 0.0));
            masked.set_input_grad_mask(None);
            masked.forward(&x);
            assert_eq!(masked.backward(&upstream).data(), dx_full.data());
        }
    }
}
