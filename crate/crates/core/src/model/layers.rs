//! Convolution and pooling kernels on single CHW samples.

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};

/// Lowers a CHW input to the `(C*9, H*W)` patch matrix of a 3×3 convolution
/// with unit stride and zero padding 1. Row `c*9 + ky*3 + kx` matches the
/// flattened `[out, in, 3, 3]` weight layout.
pub fn im2col(x: ArrayView3<f32>) -> Array2<f32> {
    let (c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let plane = h * w;
    let mut cols = Array2::<f32>::zeros((c * 9, plane));
    let dst = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let input = &src[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut dst[(ci * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &input[sy as usize * w..][..w];
                    let dst_row = &mut row[y * w..][..w];
                    match kx {
                        0 => dst_row[1..].copy_from_slice(&src_row[..w - 1]),
                        1 => dst_row.copy_from_slice(src_row),
                        _ => dst_row[..w - 1].copy_from_slice(&src_row[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input.
pub fn col2im(cols: &Array2<f32>, c: usize, h: usize, w: usize) -> Array3<f32> {
    let plane = h * w;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut out = Array3::<f32>::zeros((c, h, w));
    let dst = out.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let grad = &mut dst[ci * plane..(ci + 1) * plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &src[(ci * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let g_row = &mut grad[sy as usize * w..][..w];
                    let r = &row[y * w..][..w];
                    let (g, r) = match kx {
                        0 => (&mut g_row[..w - 1], &r[1..]),
                        1 => (&mut g_row[..], r),
                        _ => (&mut g_row[1..], &r[..w - 1]),
                    };
                    for (gv, rv) in g.iter_mut().zip(r) {
                        *gv += rv;
                    }
                }
            }
        }
    }
    out
}

/// 3×3 same-padding convolution followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out, in*9)`.
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

/// Intermediate values a trainable convolution needs for its backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub cols: Array2<f32>,
    /// Post-ReLU output, `(out, H*W)`.
    pub output: Array2<f32>,
    pub input_dim: (usize, usize, usize),
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Conv2d {
            weight: Array2::zeros((out_channels, in_channels * 9)),
            bias: Array1::zeros(out_channels),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn apply(&self, cols: &Array2<f32>) -> Array2<f32> {
        let mut out = self.weight.dot(cols);
        for (mut row, b) in out.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.mapv_inplace(|v| (v + b).max(0.0));
        }
        out
    }

    pub fn forward(&self, x: ArrayView3<f32>) -> Array3<f32> {
        let (_, h, w) = x.dim();
        let out = self.apply(&im2col(x));
        out.into_shape_with_order((self.out_channels(), h, w)).expect("same plane")
    }

    pub fn forward_cached(&self, x: ArrayView3<f32>) -> (Array3<f32>, ConvCache) {
        let dim = x.dim();
        let cols = im2col(x);
        let output = self.apply(&cols);
        let y = output
            .clone()
            .into_shape_with_order((self.out_channels(), dim.1, dim.2))
            .expect("same plane");
        (
            y,
            ConvCache {
                cols,
                output,
                input_dim: dim,
            },
        )
    }

    /// Accumulates parameter gradients for an output gradient `grad_out`
    /// `(out, H, W)` taken after the ReLU; returns the input gradient when asked.
    pub fn backward(
        &self,
        cache: &ConvCache,
        grad_out: &Array3<f32>,
        grad_weight: &mut Array2<f32>,
        grad_bias: &mut Array1<f32>,
        need_input_grad: bool,
    ) -> Option<Array3<f32>> {
        let (c, h, w) = cache.input_dim;
        let mut dz = grad_out
            .view()
            .into_shape_with_order((self.out_channels(), h * w))
            .expect("output plane")
            .to_owned();
        ndarray::Zip::from(&mut dz).and(&cache.output).for_each(|g, &o| {
            if o <= 0.0 {
                *g = 0.0;
            }
        });
        ndarray::linalg::general_mat_mul(1.0, &dz, &cache.cols.t(), 1.0, grad_weight);
        *grad_bias += &dz.sum_axis(Axis(1));
        need_input_grad.then(|| col2im(&self.weight.t().dot(&dz), c, h, w))
    }
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
/// Returns the pooled map and the flat input index of each maximum.
pub fn max_pool(x: ArrayView3<f32>) -> (Array3<f32>, Vec<u32>) {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<f32>::zeros((c, oh, ow));
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("fresh array");
    let mut o = 0;
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for idx in [best + 1, best + w, best + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[o] = src[best];
                argmax.push(best as u32);
                o += 1;
            }
        }
    }
    (out, argmax)
}

pub fn max_pool_backward(grad_out: &Array3<f32>, argmax: &[u32], input_dim: (usize, usize, usize)) -> Array3<f32> {
    let mut grad = Array3::<f32>::zeros(input_dim);
    let dst = grad.as_slice_mut().expect("fresh array");
    for (g, &idx) in grad_out.iter().zip(argmax) {
        dst[idx as usize] += g;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution, independent of the patch matrix.
    fn naive_conv(conv: &Conv2d, x: &Array3<f32>) -> Array3<f32> {
        let (c, h, w) = x.dim();
        let mut out = Array3::<f32>::zeros((conv.out_channels(), h, w));
        for o in 0..conv.out_channels() {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = conv.bias[o];
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    acc += conv.weight[[o, ci * 9 + ky * 3 + kx]] * x[[ci, sy as usize, sx as usize]];
                                }
                            }
                        }
                    }
                    out[[o, y, xx]] = acc.max(0.0);
                }
            }
        }
        out
    }

    fn random_conv(rng: &mut ChaCha8Rng, cin: usize, cout: usize) -> Conv2d {
        Conv2d {
            weight: Array::from_shape_fn((cout, cin * 9), |_| rng.gen_range(-0.5..0.5)),
            bias: Array::from_shape_fn(cout, |_| rng.gen_range(-0.1..0.1)),
        }
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = random_conv(&mut rng, 3, 4);
        let x = Array::from_shape_fn((3, 5, 6), |_| rng.gen_range(-1.0..1.0));
        let fast = conv.forward(x.view());
        let slow = naive_conv(&conv, &x);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array::from_shape_fn((2, 4, 5), |_| rng.gen_range(-1.0f32..1.0));
        let y = Array::from_shape_fn((18, 20), |_| rng.gen_range(-1.0f32..1.0));
        let lhs: f32 = (&im2col(x.view()) * &y).sum();
        let rhs: f32 = (&x * &col2im(&y, 2, 4, 5)).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let conv = random_conv(&mut rng, 2, 3);
        let x = Array::from_shape_fn((2, 4, 4), |_| rng.gen_range(-1.0f32..1.0));
        let probe = Array::from_shape_fn((3, 4, 4), |_| rng.gen_range(-1.0f32..1.0));
        // scalar objective L = <probe, conv(x)>
        let objective = |c: &Conv2d, x: &Array3<f32>| (&c.forward(x.view()) * &probe).sum() as f64;

        let (_, cache) = conv.forward_cached(x.view());
        let mut gw = Array2::zeros(conv.weight.dim());
        let mut gb = Array1::zeros(conv.bias.dim());
        let gx = conv.backward(&cache, &probe, &mut gw, &mut gb, true).unwrap();

        let eps = 1e-2f32;
        for &(o, k) in &[(0usize, 0usize), (1, 7), (2, 17)] {
            let mut plus = conv.clone();
            plus.weight[[o, k]] += eps;
            let mut minus = conv.clone();
            minus.weight[[o, k]] -= eps;
            let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * eps as f64);
            assert!((fd - gw[[o, k]] as f64).abs() < 2e-2, "w[{o},{k}] fd {fd} vs {}", gw[[o, k]]);
        }
        for &idx in &[[0usize, 1usize, 1usize], [1, 3, 0]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (objective(&conv, &xp) - objective(&conv, &xm)) / (2.0 * eps as f64);
            assert!((fd - gx[idx] as f64).abs() < 2e-2, "x{idx:?} fd {fd} vs {}", gx[idx]);
        }
    }

    #[test]
    fn pooling_picks_maxima_and_routes_gradients() {
        let x = Array::from_shape_vec((1, 2, 4), vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 8.0]).unwrap();
        let (y, arg) = max_pool(x.view());
        assert_eq!(y.into_raw_vec_and_offset().0, vec![5.0, 9.0]);
        let g = max_pool_backward(&Array3::from_elem((1, 1, 2), 1.0), &arg, (1, 2, 4));
        assert_eq!(g.into_raw_vec_and_offset().0, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
