use alloc::vec;
use alloc::vec::Vec;

use super::{Tape, Var};
use crate::par;
use crate::scalar::{matmul_a_bt_into, matmul_at_b_into, matmul_into, Scalar};
use crate::tensor::{conv_out_len, Tensor};

/// Strided, unpadded sliding-window geometry between a "big" map and the
/// "small" map of window positions. Convolution reads big -> small; the
/// transposed convolution writes small -> big. Window taps falling outside
/// the big map are skipped, which lets a transposed convolution target an
/// output one row/column smaller or larger than its natural extent.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    big_h: usize,
    big_w: usize,
    small_h: usize,
    small_w: usize,
    kernel: usize,
    stride: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.small_h * self.small_w
    }

    fn big_len(&self) -> usize {
        self.channels * self.big_h * self.big_w
    }

    fn im2col<T: Scalar>(&self, big: &[T], cols: &mut [T]) {
        let (k, p) = (self.kernel, self.positions());
        for c in 0..self.channels {
            let plane = &big[c * self.big_h * self.big_w..][..self.big_h * self.big_w];
            for i in 0..k {
                for j in 0..k {
                    let row = &mut cols[((c * k + i) * k + j) * p..][..p];
                    for oy in 0..self.small_h {
                        let y = oy * self.stride + i;
                        let dst = &mut row[oy * self.small_w..][..self.small_w];
                        if y >= self.big_h {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[y * self.big_w..][..self.big_w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let x = ox * self.stride + j;
                            *d = if x < self.big_w { src[x] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], big: &mut [T]) {
        let (k, p) = (self.kernel, self.positions());
        for c in 0..self.channels {
            let plane = &mut big[c * self.big_h * self.big_w..][..self.big_h * self.big_w];
            for i in 0..k {
                for j in 0..k {
                    let row = &cols[((c * k + i) * k + j) * p..][..p];
                    for oy in 0..self.small_h {
                        let y = oy * self.stride + i;
                        if y >= self.big_h {
                            continue;
                        }
                        let src = &row[oy * self.small_w..][..self.small_w];
                        let dst = &mut plane[y * self.big_w..][..self.big_w];
                        for (ox, &v) in src.iter().enumerate() {
                            let x = ox * self.stride + j;
                            if x < self.big_w {
                                dst[x] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

/// Per-channel sums of a `[N, C, P]` gradient.
fn channel_sums<T: Scalar>(g: &[T], channels: usize, plane: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(&[channels]);
    for (i, chunk) in g.chunks(plane).enumerate() {
        out.data_mut()[i % channels] += chunk.iter().copied().sum::<T>();
    }
    out
}

/// Sums per-image partial results in image order.
fn ordered_reduce<T: Scalar>(n: usize, len: usize, part: impl Fn(usize) -> Vec<T> + Sync + Send) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    let mut start = 0;
    while start < n {
        let end = (start + par::REDUCE_GROUP).min(n);
        for p in par::map(start..end, &part) {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        start = end;
    }
    acc
}

/// Statistics of one training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Elements per channel.
    pub count: usize,
}

impl<T: Scalar> Tape<T> {
    /// Unpadded 2-D convolution. `x: [N, Ci, H, W]`, `w: [Co, Ci, k, k]`.
    pub fn conv2d(&self, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let (sx, sw) = (vx.shape().to_vec(), vw.shape().to_vec());
        assert!(sx.len() == 4 && sw.len() == 4 && sx[1] == sw[1] && sw[2] == sw[3], "conv2d: {sx:?} * {sw:?}");
        let (n, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, k) = (sw[0], sw[2]);
        let oh = conv_out_len(h, k, stride).expect("conv2d: input smaller than kernel");
        let ow = conv_out_len(wd, k, stride).expect("conv2d: input smaller than kernel");
        let geom = Geometry { channels: ci, big_h: h, big_w: wd, small_h: oh, small_w: ow, kernel: k, stride };
        let (kk, p) = (geom.rows(), geom.positions());
        let bias_v = bias.map(|b| self.value(b));

        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        {
            let (xd, wdat) = (vx.data(), vw.data());
            let bd = bias_v.as_ref().map(|b| b.data());
            par::for_each_chunk_mut(out.data_mut(), co * p, |i, o| {
                let mut cols = vec![T::zero(); kk * p];
                geom.im2col(&xd[i * geom.big_len()..][..geom.big_len()], &mut cols);
                matmul_into(co, kk, p, wdat, &cols, o, false);
                if let Some(b) = bd {
                    add_channel_bias(o, b, p);
                }
            });
        }

        let mut parents = vec![x, w];
        parents.extend(bias);
        self.push_op(out, &parents, move |ctx| {
            let g = ctx.grad.data();
            let (xd, wdat) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let gx = ctx.needs[0].then(|| {
                let mut gx = Tensor::zeros(&sx);
                par::for_each_chunk_mut(gx.data_mut(), geom.big_len(), |i, dx| {
                    let mut dcols = vec![T::zero(); kk * p];
                    matmul_at_b_into(kk, co, p, wdat, &g[i * co * p..][..co * p], &mut dcols, false);
                    geom.col2im(&dcols, dx);
                });
                gx
            });
            let gw = ctx.needs[1].then(|| {
                let acc = ordered_reduce(n, co * kk, |i| {
                    let mut cols = vec![T::zero(); kk * p];
                    geom.im2col(&xd[i * geom.big_len()..][..geom.big_len()], &mut cols);
                    let mut dw = vec![T::zero(); co * kk];
                    matmul_a_bt_into(co, p, kk, &g[i * co * p..][..co * p], &cols, &mut dw, false);
                    dw
                });
                Tensor::from_vec(&sw, acc).unwrap()
            });
            let mut grads = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| channel_sums(g, co, p)));
            }
            grads
        })
    }

    /// Unpadded transposed 2-D convolution producing exactly `out_hw`.
    ///
    /// `x: [N, Ci, H, W]`, `w: [Ci, Co, k, k]`. The natural output extent is
    /// `(H - 1) * stride + k`; `out_hw` may differ from it by at most one per
    /// axis (extra rows receive only the bias, missing rows are cropped).
    pub fn conv_transpose2d(&self, x: Var, w: Var, bias: Option<Var>, stride: usize, out_hw: (usize, usize)) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let (sx, sw) = (vx.shape().to_vec(), vw.shape().to_vec());
        assert!(sx.len() == 4 && sw.len() == 4 && sx[1] == sw[0] && sw[2] == sw[3], "conv_transpose2d: {sx:?} * {sw:?}");
        let (n, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, k) = (sw[1], sw[2]);
        let (oh, ow) = out_hw;
        let natural = ((h - 1) * stride + k, (wd - 1) * stride + k);
        assert!(
            oh.abs_diff(natural.0) <= 1 && ow.abs_diff(natural.1) <= 1,
            "conv_transpose2d: target {out_hw:?} is more than one step from natural extent {natural:?}"
        );
        let geom = Geometry { channels: co, big_h: oh, big_w: ow, small_h: h, small_w: wd, kernel: k, stride };
        let (kk, p) = (geom.rows(), geom.positions());
        let big = geom.big_len();
        let bias_v = bias.map(|b| self.value(b));

        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        {
            let (xd, wdat) = (vx.data(), vw.data());
            let bd = bias_v.as_ref().map(|b| b.data());
            par::for_each_chunk_mut(out.data_mut(), big, |i, o| {
                let mut cols = vec![T::zero(); kk * p];
                matmul_at_b_into(kk, ci, p, wdat, &xd[i * ci * p..][..ci * p], &mut cols, false);
                geom.col2im(&cols, o);
                if let Some(b) = bd {
                    add_channel_bias(o, b, oh * ow);
                }
            });
        }

        let mut parents = vec![x, w];
        parents.extend(bias);
        self.push_op(out, &parents, move |ctx| {
            let g = ctx.grad.data();
            let (xd, wdat) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let gx = ctx.needs[0].then(|| {
                let mut gx = Tensor::zeros(&sx);
                par::for_each_chunk_mut(gx.data_mut(), ci * p, |i, dx| {
                    let mut dcols = vec![T::zero(); kk * p];
                    geom.im2col(&g[i * big..][..big], &mut dcols);
                    matmul_into(ci, kk, p, wdat, &dcols, dx, false);
                });
                gx
            });
            let gw = ctx.needs[1].then(|| {
                let acc = ordered_reduce(n, ci * kk, |i| {
                    let mut dcols = vec![T::zero(); kk * p];
                    geom.im2col(&g[i * big..][..big], &mut dcols);
                    let mut dw = vec![T::zero(); ci * kk];
                    matmul_a_bt_into(ci, p, kk, &xd[i * ci * p..][..ci * p], &dcols, &mut dw, false);
                    dw
                });
                Tensor::from_vec(&sw, acc).unwrap()
            });
            let mut grads = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| channel_sums(g, co, oh * ow)));
            }
            grads
        })
    }

    /// Batch normalization over all axes but axis 1 of `[N, C, ...]`.
    ///
    /// With `running = None` the batch statistics are used (and returned);
    /// otherwise the supplied `(mean, var)` are treated as constants.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> (Var, Option<BatchStats<T>>) {
        let vx = self.value(x);
        let s = vx.shape().to_vec();
        let (n, c) = (s[0], s[1]);
        let plane: usize = s[2..].iter().product();
        let count = n * plane;
        let xd = vx.data();

        let (mean, var, stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), None),
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut total = T::zero();
                    for i in 0..n {
                        total += xd[(i * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                    }
                    let mu = total / T::of(count as f64);
                    let mut sq = T::zero();
                    for i in 0..n {
                        for &v in &xd[(i * c + ch) * plane..][..plane] {
                            sq += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = sq / T::of(count as f64);
                }
                let stats = BatchStats { mean: mean.clone(), var: var.clone(), count };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (vg, vb) = (self.value(gamma), self.value(beta));
        let mut out = Tensor::zeros(&s);
        for (idx, (o, xs)) in out.data_mut().chunks_mut(plane).zip(xd.chunks(plane)).enumerate() {
            let ch = idx % c;
            let (a, b) = (vg.data()[ch] * inv_std[ch], vb.data()[ch] - vg.data()[ch] * inv_std[ch] * mean[ch]);
            for (o, &v) in o.iter_mut().zip(xs) {
                *o = a * v + b;
            }
        }
        let training = stats.is_some();
        let var_out = self.push_op(out, &[x, gamma, beta], move |ctx| {
            let g = ctx.grad.data();
            let xd = ctx.inputs[0].data();
            let gam = ctx.inputs[1].data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for (idx, (gs, xs)) in g.chunks(plane).zip(xd.chunks(plane)).enumerate() {
                let ch = idx % c;
                for (&gv, &xv) in gs.iter().zip(xs) {
                    sum_g[ch] += gv;
                    sum_gx[ch] += gv * (xv - mean[ch]) * inv_std[ch];
                }
            }
            let gx = ctx.needs[0].then(|| {
                let mut gx = Tensor::zeros(&s);
                let cnt = T::of(count as f64);
                for (idx, ((d, gs), xs)) in gx.data_mut().chunks_mut(plane).zip(g.chunks(plane)).zip(xd.chunks(plane)).enumerate() {
                    let ch = idx % c;
                    let scale = gam[ch] * inv_std[ch];
                    for ((d, &gv), &xv) in d.iter_mut().zip(gs).zip(xs) {
                        *d = if training {
                            let xhat = (xv - mean[ch]) * inv_std[ch];
                            scale * (gv - sum_g[ch] / cnt - xhat * sum_gx[ch] / cnt)
                        } else {
                            scale * gv
                        };
                    }
                }
                gx
            });
            vec![gx, Some(Tensor::from_vec(&[c], sum_gx).unwrap()), Some(Tensor::from_vec(&[c], sum_g).unwrap())]
        });
        (var_out, stats)
    }
}
