//! Layers with explicit backward passes.
//!
//! Activations are `(batch, channels, positions)` arrays; 2D feature maps
//! flatten `(time, freq)` into the last axis in row-major order. Every layer
//! has a pure `infer` (evaluation mode), a `train_forward` that caches what
//! `backward` needs, and `backward`, which accumulates parameter gradients
//! and returns the input gradient.

use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// A parameter tensor with its gradient. Non-trainable entries (batch-norm
/// running statistics) ride along for checkpointing but are skipped by the
/// optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl Param {
    fn new(value: Vec<f32>, shape: &[usize], trainable: bool) -> Self {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        Self {
            grad: vec![0.0; value.len()],
            value,
            shape: shape.to_vec(),
            trainable,
        }
    }

    fn filled(shape: &[usize], v: f32, trainable: bool) -> Self {
        Self::new(vec![v; shape.iter().product()], shape, trainable)
    }

    /// He-normal initialization for a layer with `fan_in` inputs per output.
    fn he(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n = shape.iter().product();
        Self::new(
            (0..n).map(|_| normal.sample(rng) as f32).collect(),
            shape,
            true,
        )
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    fn add_grad(&mut self, g: impl IntoIterator<Item = f32>) {
        for (dst, v) in self.grad.iter_mut().zip(g) {
            *dst += v;
        }
    }

    fn matrix(&self, rows: usize) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((rows, self.value.len() / rows), &self.value).expect("param shape")
    }
}

/// Unfolds one example for a convolution with zero "same" padding.
///
/// `x` is `(channels, time * freq)`; the result has one row per
/// `(channel, kernel offset)` and one column per output position.
fn im2col(x: ArrayView2<f32>, time: usize, freq: usize, kt: usize, kf: usize) -> Array2<f32> {
    let channels = x.nrows();
    let (pt, pf) = (kt / 2, kf / 2);
    let mut cols = Array2::zeros((channels * kt * kf, time * freq));
    for c in 0..channels {
        let xc = x.row(c);
        for i in 0..kt {
            for j in 0..kf {
                let mut row = cols.row_mut((c * kt + i) * kf + j);
                let row = row.as_slice_mut().expect("standard layout");
                for t in 0..time {
                    let src_t = t as isize + i as isize - pt as isize;
                    if src_t < 0 || src_t >= time as isize {
                        continue;
                    }
                    let (f_lo, f_hi) = (pf.saturating_sub(j), (freq + pf - j).min(freq));
                    let dst = &mut row[t * freq + f_lo..t * freq + f_hi];
                    let base = src_t as usize * freq;
                    let src_lo = base + f_lo + j - pf;
                    dst.copy_from_slice(&xc.as_slice().expect("standard layout")[src_lo..src_lo + dst.len()]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: ArrayView2<f32>, channels: usize, time: usize, freq: usize, kt: usize, kf: usize) -> Array2<f32> {
    let (pt, pf) = (kt / 2, kf / 2);
    let mut x = Array2::<f32>::zeros((channels, time * freq));
    for c in 0..channels {
        let mut xc = x.row_mut(c);
        let xc = xc.as_slice_mut().expect("standard layout");
        for i in 0..kt {
            for j in 0..kf {
                let row = cols.row((c * kt + i) * kf + j);
                let row = row.as_slice().expect("standard layout");
                for t in 0..time {
                    let src_t = t as isize + i as isize - pt as isize;
                    if src_t < 0 || src_t >= time as isize {
                        continue;
                    }
                    let (f_lo, f_hi) = (pf.saturating_sub(j), (freq + pf - j).min(freq));
                    let base = src_t as usize * freq + f_lo + j - pf;
                    for (d, v) in xc[base..base + f_hi - f_lo]
                        .iter_mut()
                        .zip(&row[t * freq + f_lo..t * freq + f_hi])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
    x
}

/// Stride-1 convolution with zero same-padding over a `(time, freq)` grid.
/// With `freq == 1` and `kf == 1` it is a 1D convolution along time.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Param,
    pub bias: Option<Param>,
    in_ch: usize,
    out_ch: usize,
    kt: usize,
    kf: usize,
    input: Option<Array3<f32>>,
    grid: (usize, usize),
}

impl Conv {
    pub fn new(in_ch: usize, out_ch: usize, kt: usize, kf: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kt * kf;
        Self {
            weight: Param::he(&[out_ch, in_ch, kt, kf], fan_in, rng),
            bias: bias.then(|| Param::filled(&[out_ch], 0.0, true)),
            in_ch,
            out_ch,
            kt,
            kf,
            input: None,
            grid: (0, 0),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    fn one(&self, x: ArrayView2<f32>, time: usize, freq: usize) -> Array2<f32> {
        let w = self.weight.matrix(self.out_ch);
        let mut y = if self.kt * self.kf == 1 {
            w.dot(&x)
        } else {
            w.dot(&im2col(x, time, freq, self.kt, self.kf))
        };
        if let Some(b) = &self.bias {
            for (mut row, &bv) in y.rows_mut().into_iter().zip(&b.value) {
                row += bv;
            }
        }
        y
    }

    pub fn infer(&self, x: &Array3<f32>, time: usize, freq: usize) -> Array3<f32> {
        assert_eq!(x.shape()[1], self.in_ch, "conv input channels");
        let outs: Vec<Array2<f32>> = x
            .outer_iter()
            .into_par_iter()
            .map(|xb| self.one(xb, time, freq))
            .collect();
        stack(&outs)
    }

    pub fn train_forward(&mut self, x: Array3<f32>, time: usize, freq: usize) -> Array3<f32> {
        let y = self.infer(&x, time, freq);
        self.input = Some(x);
        self.grid = (time, freq);
        y
    }

    pub fn backward(&mut self, dy: &Array3<f32>) -> Array3<f32> {
        let x = self.input.take().expect("backward without train_forward");
        let (time, freq) = self.grid;
        let (kt, kf, in_ch) = (self.kt, self.kf, self.in_ch);
        let w = self.weight.matrix(self.out_ch);
        let parts: Vec<(Array2<f32>, Array2<f32>)> = x
            .outer_iter()
            .into_par_iter()
            .zip(dy.outer_iter().into_par_iter())
            .map(|(xb, dyb)| {
                if kt * kf == 1 {
                    (dyb.dot(&xb.t()), w.t().dot(&dyb))
                } else {
                    let cols = im2col(xb, time, freq, kt, kf);
                    let dw = dyb.dot(&cols.t());
                    let dcols = w.t().dot(&dyb);
                    (dw, col2im(dcols.view(), in_ch, time, freq, kt, kf))
                }
            })
            .collect();
        let mut dxs = Vec::with_capacity(parts.len());
        for (dw, dx) in parts {
            self.weight.add_grad(dw.iter().copied());
            dxs.push(dx);
        }
        if let Some(b) = &mut self.bias {
            let db = dy.sum_axis(Axis(2)).sum_axis(Axis(0));
            b.add_grad(db.iter().copied());
        }
        stack(&dxs)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

fn stack(items: &[Array2<f32>]) -> Array3<f32> {
    let (r, c) = items[0].dim();
    let mut out = Array3::zeros((items.len(), r, c));
    for (mut dst, src) in out.outer_iter_mut().zip(items) {
        dst.assign(src);
    }
    out
}

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Per-channel batch normalization over batch and positions.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(Array3<f32>, Vec<f32>)>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], 1.0, true),
            beta: Param::filled(&[channels], 0.0, true),
            running_mean: Param::filled(&[channels], 0.0, false),
            running_var: Param::filled(&[channels], 1.0, false),
            cache: None,
        }
    }

    pub fn infer(&self, x: &Array3<f32>) -> Array3<f32> {
        let mut y = x.clone();
        for (c, mut lane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let inv = 1.0 / (self.running_var.value[c] + BN_EPS).sqrt();
            let (m, g, b) = (self.running_mean.value[c], self.gamma.value[c], self.beta.value[c]);
            lane.mapv_inplace(|v| (v - m) * inv * g + b);
        }
        y
    }

    pub fn train_forward(&mut self, x: Array3<f32>) -> Array3<f32> {
        let n = (x.shape()[0] * x.shape()[2]) as f64;
        let mut xhat = x;
        let mut y = Array3::zeros(xhat.raw_dim());
        let mut inv_stds = Vec::with_capacity(xhat.shape()[1]);
        for (c, (mut lane, mut out)) in xhat
            .axis_iter_mut(Axis(1))
            .zip(y.axis_iter_mut(Axis(1)))
            .enumerate()
        {
            let mean = lane.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = lane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + BN_EPS as f64).sqrt();
            let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
            let rm = &mut self.running_mean.value[c];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean as f32;
            let rv = &mut self.running_var.value[c];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased as f32;
            lane.mapv_inplace(|v| ((v as f64 - mean) * inv) as f32);
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            Zip::from(&mut out).and(&lane).for_each(|o, &h| *o = h * g + b);
            inv_stds.push(inv as f32);
        }
        self.cache = Some((xhat, inv_stds));
        y
    }

    pub fn backward(&mut self, dy: &Array3<f32>) -> Array3<f32> {
        let (xhat, inv_stds) = self.cache.take().expect("backward without train_forward");
        let n = (dy.shape()[0] * dy.shape()[2]) as f64;
        let mut dx = Array3::zeros(dy.raw_dim());
        for (c, ((dyc, xc), mut dxc)) in dy
            .axis_iter(Axis(1))
            .zip(xhat.axis_iter(Axis(1)))
            .zip(dx.axis_iter_mut(Axis(1)))
            .enumerate()
        {
            let mut sum_dy = 0f64;
            let mut sum_dy_xhat = 0f64;
            Zip::from(&dyc).and(&xc).for_each(|&d, &h| {
                sum_dy += d as f64;
                sum_dy_xhat += d as f64 * h as f64;
            });
            self.gamma.grad[c] += sum_dy_xhat as f32;
            self.beta.grad[c] += sum_dy as f32;
            let g = self.gamma.value[c] as f64;
            let scale = g * inv_stds[c] as f64 / n;
            Zip::from(&mut dxc).and(&dyc).and(&xc).for_each(|o, &d, &h| {
                *o = (scale * (n * d as f64 - sum_dy - h as f64 * sum_dy_xhat)) as f32;
            });
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

/// Rectifier that lets NaN through so divergence stays visible.
pub fn relu(x: Array3<f32>) -> Array3<f32> {
    x.mapv_into(|v| if v <= 0.0 { 0.0 } else { v })
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(mut dy: Array3<f32>, out: &Array3<f32>) -> Array3<f32> {
    Zip::from(&mut dy).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
    dy
}

/// Max pooling by 2 along frequency (floor), on `(B, C, time * freq)`.
pub fn pool_freq(x: &Array3<f32>, time: usize, freq: usize) -> (Array3<f32>, Vec<u8>) {
    let half = freq / 2;
    let (b, c, _) = x.dim();
    let mut y = Array3::zeros((b, c, time * half));
    let mut pick = vec![0u8; b * c * time * half];
    let mut i = 0;
    for bi in 0..b {
        for ci in 0..c {
            for t in 0..time {
                for f in 0..half {
                    let a = x[[bi, ci, t * freq + 2 * f]];
                    let bb = x[[bi, ci, t * freq + 2 * f + 1]];
                    let (v, p) = if bb > a { (bb, 1) } else { (a, 0) };
                    y[[bi, ci, t * half + f]] = v;
                    pick[i] = p;
                    i += 1;
                }
            }
        }
    }
    (y, pick)
}

pub fn pool_freq_backward(dy: &Array3<f32>, pick: &[u8], time: usize, freq: usize) -> Array3<f32> {
    let half = freq / 2;
    let (b, c, _) = dy.dim();
    let mut dx = Array3::zeros((b, c, time * freq));
    let mut i = 0;
    for bi in 0..b {
        for ci in 0..c {
            for t in 0..time {
                for f in 0..half {
                    dx[[bi, ci, t * freq + 2 * f + pick[i] as usize]] = dy[[bi, ci, t * half + f]];
                    i += 1;
                }
            }
        }
    }
    dx
}

/// Mean over frequency: `(B, C, time * freq)` to `(B, C, time)`.
pub fn mean_freq(x: &Array3<f32>, time: usize, freq: usize) -> Array3<f32> {
    let (b, c, _) = x.dim();
    let view = x.view().into_shape_with_order((b, c, time, freq)).expect("layout");
    view.mean_axis(Axis(3)).expect("nonempty")
}

pub fn mean_freq_backward(dy: &Array3<f32>, freq: usize) -> Array3<f32> {
    let (b, c, time) = dy.dim();
    let mut dx = Array3::zeros((b, c, time * freq));
    let scale = 1.0 / freq as f32;
    for bi in 0..b {
        for ci in 0..c {
            for t in 0..time {
                let v = dy[[bi, ci, t]] * scale;
                dx.slice_mut(s![bi, ci, t * freq..(t + 1) * freq]).fill(v);
            }
        }
    }
    dx
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub fn random3(shape: (usize, usize, usize), seed: u64) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    // direct nested-loop convolution, independent of im2col
    fn naive_conv(conv: &Conv, x: &Array3<f32>, time: usize, freq: usize) -> Array3<f32> {
        let (b, cin, _) = x.dim();
        let mut y = Array3::zeros((b, conv.out_ch, time * freq));
        let w = &conv.weight.value;
        for bi in 0..b {
            for o in 0..conv.out_ch {
                for t in 0..time {
                    for f in 0..freq {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |bb| bb.value[o]);
                        for c in 0..cin {
                            for i in 0..conv.kt {
                                for j in 0..conv.kf {
                                    let st = t as isize + i as isize - (conv.kt / 2) as isize;
                                    let sf = f as isize + j as isize - (conv.kf / 2) as isize;
                                    if st < 0 || sf < 0 || st >= time as isize || sf >= freq as isize {
                                        continue;
                                    }
                                    let wi = ((o * cin + c) * conv.kt + i) * conv.kf + j;
                                    acc += w[wi] * x[[bi, c, st as usize * freq + sf as usize]];
                                }
                            }
                        }
                        y[[bi, o, t * freq + f]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(kt, kf, time, freq) in &[(3, 1, 9, 1), (1, 1, 5, 1), (3, 3, 6, 5), (5, 3, 7, 4)] {
            let conv = Conv::new(3, 4, kt, kf, true, &mut rng);
            let x = random3((2, 3, time * freq), 7);
            let a = conv.infer(&x, time, freq);
            let b = naive_conv(&conv, &x, time, freq);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let (ch, time, freq) = (2, 5, 4);
        let x = random3((1, ch, time * freq), 3).index_axis_move(Axis(0), 0);
        let cols = im2col(x.view(), time, freq, 3, 3);
        let c = random3((1, cols.nrows(), cols.ncols()), 4).index_axis_move(Axis(0), 0);
        let lhs: f32 = (&cols * &c).sum();
        let rhs: f32 = (&x * &col2im(c.view(), ch, time, freq, 3, 3)).sum();
        assert!((lhs - rhs).abs() < 1e-4, "{lhs} {rhs}");
    }

    #[test]
    fn pooling_and_mean_shapes() {
        let x = random3((2, 3, 4 * 5), 9);
        let (y, pick) = pool_freq(&x, 4, 5);
        assert_eq!(y.dim(), (2, 3, 8));
        let dx = pool_freq_backward(&Array3::ones(y.raw_dim()), &pick, 4, 5);
        assert_eq!(dx.sum(), 16.0 * 3.0);
        let m = mean_freq(&x, 4, 5);
        assert_eq!(m.dim(), (2, 3, 4));
        assert!((m[[1, 2, 3]] - x.slice(s![1, 2, 15..20]).mean().unwrap()).abs() < 1e-6);
    }
}
