use alloc::vec;
use alloc::vec::Vec;

use super::{Tape, Var};
use crate::scalar::{matmul_a_bt_into, matmul_at_b_into, matmul_into, Scalar};
use crate::tensor::Tensor;

pub(crate) const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub(crate) const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

pub(crate) fn selu<T: Scalar>(x: T) -> T {
    let lambda = T::of(SELU_LAMBDA);
    if x > T::zero() {
        lambda * x
    } else {
        lambda * T::of(SELU_ALPHA) * (x.exp() - T::one())
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let out = va.zip_map(&vb, |x, y| x + y);
        self.push_op(out, &[a, b], |ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())])
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub: shape mismatch");
        let out = va.zip_map(&vb, |x, y| x - y);
        self.push_op(out, &[a, b], |ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))])
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let out = va.zip_map(&vb, |x, y| x * y);
        self.push_op(out, &[a, b], |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad.zip_map(&ctx.inputs[1], |g, y| g * y)),
                ctx.needs[1].then(|| ctx.grad.zip_map(&ctx.inputs[0], |g, x| g * x)),
            ]
        })
    }

    pub fn scale(&self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push_op(out, &[a], move |ctx| vec![Some(ctx.grad.map(|g| g * factor))])
    }

    pub fn selu(&self, a: Var) -> Var {
        let out = self.value(a).map(selu);
        self.push_op(out, &[a], |ctx| {
            let la = T::of(SELU_LAMBDA * SELU_ALPHA);
            let lambda = T::of(SELU_LAMBDA);
            let mut g = ctx.grad.clone();
            for ((g, &x), &y) in g.data_mut().iter_mut().zip(ctx.inputs[0].data()).zip(ctx.output.data()) {
                *g *= if x > T::zero() { lambda } else { y + la };
            }
            vec![Some(g)]
        })
    }

    pub fn sum(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(out, &[a], |ctx| {
            vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.item()))]
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Mean absolute difference; the subgradient of `|x|` at zero is zero.
    pub fn l1_mean(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "l1_mean: shape mismatch");
        let n = T::of(va.len() as f64);
        let total: T = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y).abs()).sum();
        self.push_op(Tensor::scalar(total / n), &[a, b], move |ctx| {
            let g = ctx.grad.item() / n;
            let d = ctx.inputs[0].zip_map(&ctx.inputs[1], |x, y| sign(x - y) * g);
            let neg = ctx.needs[1].then(|| d.map(|v| -v));
            vec![Some(d), neg]
        })
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a);
        let old = v.shape().to_vec();
        let out = (*v).clone().reshaped(shape).expect("reshape: element count mismatch");
        self.push_op(out, &[a], move |ctx| vec![Some(ctx.grad.clone().reshaped(&old).unwrap())])
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last2(&self, a: Var) -> Var {
        let v = self.value(a);
        let shape = v.shape().to_vec();
        assert!(shape.len() >= 2);
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let mut out_shape = shape.clone();
        let k = out_shape.len();
        out_shape.swap(k - 2, k - 1);
        let out = Tensor::from_vec(&out_shape, transpose_blocks(v.data(), r, c)).unwrap();
        self.push_op(out, &[a], move |ctx| {
            vec![Some(Tensor::from_vec(&shape, transpose_blocks(ctx.grad.data(), c, r)).unwrap())]
        })
    }

    /// Concatenates `[N, C1, ...]` and `[N, C2, ...]` along axis 1.
    pub fn concat_axis1(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        assert_eq!(sa[0], sb[0], "concat: batch mismatch");
        assert_eq!(sa[2..], sb[2..], "concat: trailing shape mismatch");
        let n = sa[0];
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1] * inner, sb[1] * inner);
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(&va.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&vb.data()[i * cb..(i + 1) * cb]);
        }
        let mut shape = sa.clone();
        shape[1] += sb[1];
        let out = Tensor::from_vec(&shape, data).unwrap();
        self.push_op(out, &[a, b], move |ctx| {
            let g = ctx.grad.data();
            let mut ga = Vec::with_capacity(n * ca);
            let mut gb = Vec::with_capacity(n * cb);
            for i in 0..n {
                let row = &g[i * (ca + cb)..(i + 1) * (ca + cb)];
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            vec![
                Some(Tensor::from_vec(&sa, ga).unwrap()),
                ctx.needs[1].then(|| Tensor::from_vec(&sb, gb).unwrap()),
            ]
        })
    }

    /// All ordered node pairs: `[B, M, N] -> [B*M*M, 2N]`, row `(b, i, j)` is
    /// `[f_i || f_j]`.
    pub fn pair_concat(&self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.shape().to_vec();
        assert_eq!(s.len(), 3, "pair_concat expects [B, M, N]");
        let (b, m, n) = (s[0], s[1], s[2]);
        let x = v.data();
        let mut data = Vec::with_capacity(b * m * m * 2 * n);
        for bi in 0..b {
            for i in 0..m {
                for j in 0..m {
                    data.extend_from_slice(&x[(bi * m + i) * n..(bi * m + i + 1) * n]);
                    data.extend_from_slice(&x[(bi * m + j) * n..(bi * m + j + 1) * n]);
                }
            }
        }
        let out = Tensor::from_vec(&[b * m * m, 2 * n], data).unwrap();
        self.push_op(out, &[a], move |ctx| {
            let g = ctx.grad.data();
            let mut gx = vec![T::zero(); b * m * n];
            for bi in 0..b {
                for i in 0..m {
                    for j in 0..m {
                        let row = &g[((bi * m + i) * m + j) * 2 * n..][..2 * n];
                        for (d, &v) in gx[(bi * m + i) * n..][..n].iter_mut().zip(&row[..n]) {
                            *d += v;
                        }
                        for (d, &v) in gx[(bi * m + j) * n..][..n].iter_mut().zip(&row[n..]) {
                            *d += v;
                        }
                    }
                }
            }
            vec![Some(Tensor::from_vec(&s, gx).unwrap())]
        })
    }

    /// `[R, K] x [K, N] -> [R, N]`.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        assert!(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul: {sa:?} x {sb:?}");
        let (r, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[r, n]);
        matmul_into(r, k, n, va.data(), vb.data(), out.data_mut(), false);
        self.push_op(out, &[a, b], move |ctx| {
            let g = ctx.grad.data();
            let ga = ctx.needs[0].then(|| {
                let mut ga = Tensor::zeros(&[r, k]);
                matmul_a_bt_into(r, n, k, g, ctx.inputs[1].data(), ga.data_mut(), false);
                ga
            });
            let gb = ctx.needs[1].then(|| {
                let mut gb = Tensor::zeros(&[k, n]);
                matmul_at_b_into(k, r, n, ctx.inputs[0].data(), g, gb.data_mut(), false);
                gb
            });
            vec![ga, gb]
        })
    }

    /// Adds a `[N]` bias to every row of `[R, N]`.
    pub fn add_bias(&self, a: Var, bias: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(bias));
        let n = vb.len();
        assert_eq!(*va.shape().last().unwrap(), n, "add_bias: width mismatch");
        let mut out = (*va).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        self.push_op(out, &[a, bias], move |ctx| {
            let gb = ctx.needs[1].then(|| {
                let mut gb = Tensor::zeros(&[n]);
                for row in ctx.grad.data().chunks(n) {
                    for (d, &g) in gb.data_mut().iter_mut().zip(row) {
                        *d += g;
                    }
                }
                gb
            });
            vec![Some(ctx.grad.clone()), gb]
        })
    }

    /// `x W + b`.
    pub fn linear(&self, x: Var, weight: Var, bias: Option<Var>) -> Var {
        let y = self.matmul(x, weight);
        match bias {
            Some(b) => self.add_bias(y, b),
            None => y,
        }
    }

    /// Batched product `[B, P, Q] x [B, Q, R] -> [B, P, R]`.
    pub fn bmm(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1], "bmm: {sa:?} x {sb:?}");
        let (batch, p, q, r) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = Tensor::zeros(&[batch, p, r]);
        for i in 0..batch {
            matmul_into(
                p,
                q,
                r,
                &va.data()[i * p * q..][..p * q],
                &vb.data()[i * q * r..][..q * r],
                &mut out.data_mut()[i * p * r..][..p * r],
                false,
            );
        }
        self.push_op(out, &[a, b], move |ctx| {
            let g = ctx.grad.data();
            let ga = ctx.needs[0].then(|| {
                let mut ga = Tensor::zeros(&sa);
                for i in 0..batch {
                    matmul_a_bt_into(
                        p,
                        r,
                        q,
                        &g[i * p * r..][..p * r],
                        &ctx.inputs[1].data()[i * q * r..][..q * r],
                        &mut ga.data_mut()[i * p * q..][..p * q],
                        false,
                    );
                }
                ga
            });
            let gb = ctx.needs[1].then(|| {
                let mut gb = Tensor::zeros(&sb);
                for i in 0..batch {
                    matmul_at_b_into(
                        q,
                        p,
                        r,
                        &ctx.inputs[0].data()[i * p * q..][..p * q],
                        &g[i * p * r..][..p * r],
                        &mut gb.data_mut()[i * q * r..][..q * r],
                        false,
                    );
                }
                gb
            });
            vec![ga, gb]
        })
    }

    /// Softmax along the last axis.
    pub fn softmax_last(&self, a: Var) -> Var {
        let v = self.value(a);
        let c = *v.shape().last().unwrap();
        let mut out = (*v).clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push_op(out, &[a], move |ctx| {
            let mut g = ctx.grad.clone();
            for (grow, yrow) in g.data_mut().chunks_mut(c).zip(ctx.output.data().chunks(c)) {
                let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                for (g, &y) in grow.iter_mut().zip(yrow) {
                    *g = y * (*g - dot);
                }
            }
            vec![Some(g)]
        })
    }

    /// `(A + A^T) / 2` for each `[M, M]` block of `[B, M, M]`.
    pub fn symmetrize(&self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.shape().to_vec();
        assert!(s.len() == 3 && s[1] == s[2], "symmetrize expects [B, M, M]");
        let m = s[1];
        let half = T::of(0.5);
        let sym = move |x: &[T]| -> Vec<T> {
            let mut out = vec![T::zero(); x.len()];
            for (blk_out, blk) in out.chunks_mut(m * m).zip(x.chunks(m * m)) {
                for i in 0..m {
                    for j in 0..m {
                        blk_out[i * m + j] = (blk[i * m + j] + blk[j * m + i]) * half;
                    }
                }
            }
            out
        };
        let out = Tensor::from_vec(&s, sym(v.data())).unwrap();
        self.push_op(out, &[a], move |ctx| vec![Some(Tensor::from_vec(&s, sym(ctx.grad.data())).unwrap())])
    }

    /// `D^{-1/2} A D^{-1/2}` per `[M, M]` block, with `D_ii = sum_j A_ij`.
    ///
    /// Panics if a degree is zero or negative; callers validate first. NaN
    /// degrees propagate so divergence surfaces as a non-finite loss.
    pub fn degree_normalize(&self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.shape().to_vec();
        assert!(s.len() == 3 && s[1] == s[2], "degree_normalize expects [B, M, M]");
        let m = s[1];
        let inv_sqrt: Vec<T> = v
            .data()
            .chunks(m)
            .map(|row| {
                let d: T = row.iter().copied().sum();
                assert!(!(d <= T::zero()), "degree_normalize: non-positive degree");
                T::one() / d.sqrt()
            })
            .collect();
        let mut out = (*v).clone();
        for (bi, blk) in out.data_mut().chunks_mut(m * m).enumerate() {
            let u = &inv_sqrt[bi * m..][..m];
            for i in 0..m {
                for j in 0..m {
                    blk[i * m + j] *= u[i] * u[j];
                }
            }
        }
        self.push_op(out, &[a], move |ctx| {
            let g = ctx.grad.data();
            let x = ctx.inputs[0].data();
            let mut ga = vec![T::zero(); x.len()];
            for bi in 0..s[0] {
                let u = &inv_sqrt[bi * m..][..m];
                let gb = &g[bi * m * m..][..m * m];
                let xb = &x[bi * m * m..][..m * m];
                // dL/du_k collects both the row and column appearances of u_k.
                let mut du = vec![T::zero(); m];
                for i in 0..m {
                    for j in 0..m {
                        let t = gb[i * m + j] * xb[i * m + j];
                        du[i] += t * u[j];
                        du[j] += t * u[i];
                    }
                }
                let out_blk = &mut ga[bi * m * m..][..m * m];
                for i in 0..m {
                    // u = d^{-1/2}  =>  du/dd = -u^3 / 2
                    let dd = du[i] * (-T::of(0.5)) * u[i] * u[i] * u[i];
                    for j in 0..m {
                        out_blk[i * m + j] = gb[i * m + j] * u[i] * u[j] + dd;
                    }
                }
            }
            vec![Some(Tensor::from_vec(&s, ga).unwrap())]
        })
    }

    /// Mean over the last axis: `[..., P] -> [...]`.
    pub fn mean_last(&self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.shape().to_vec();
        let p = *s.last().unwrap();
        let inv = T::one() / T::of(p as f64);
        let data: Vec<T> = v.data().chunks(p).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::from_vec(&s[..s.len() - 1], data).unwrap();
        self.push_op(out, &[a], move |ctx| {
            let mut g = Vec::with_capacity(p * ctx.grad.len());
            for &gv in ctx.grad.data() {
                g.extend(core::iter::repeat_n(gv * inv, p));
            }
            vec![Some(Tensor::from_vec(&s, g).unwrap())]
        })
    }

    /// Elementwise complex product of `[B, 2, P]` planes (re, im).
    pub fn complex_mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let s = va.shape().to_vec();
        assert_eq!(va.shape(), vb.shape(), "complex_mul: shape mismatch");
        assert!(s.len() == 3 && s[1] == 2, "complex_mul expects [B, 2, P]");
        let p = s[2];
        let mut out = Tensor::zeros(&s);
        for ((o, x), y) in out.data_mut().chunks_mut(2 * p).zip(va.data().chunks(2 * p)).zip(vb.data().chunks(2 * p)) {
            for k in 0..p {
                let (xr, xi, yr, yi) = (x[k], x[p + k], y[k], y[p + k]);
                o[k] = xr * yr - xi * yi;
                o[p + k] = xr * yi + xi * yr;
            }
        }
        self.push_op(out, &[a, b], move |ctx| {
            // d/dx of conj-linear pairing: grad_x = g * conj(y), grad_y = g * conj(x)
            let cgrad = |other: &Tensor<T>| {
                let mut r = Tensor::zeros(&s);
                for ((o, g), y) in r.data_mut().chunks_mut(2 * p).zip(ctx.grad.data().chunks(2 * p)).zip(other.data().chunks(2 * p)) {
                    for k in 0..p {
                        let (gr, gi, yr, yi) = (g[k], g[p + k], y[k], y[p + k]);
                        o[k] = gr * yr + gi * yi;
                        o[p + k] = gi * yr - gr * yi;
                    }
                }
                r
            };
            vec![ctx.needs[0].then(|| cgrad(&ctx.inputs[1])), ctx.needs[1].then(|| cgrad(&ctx.inputs[0]))]
        })
    }

    /// `[B, 2, P] -> [B, P]` complex magnitude; gradient is zero at the origin.
    pub fn magnitude(&self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.shape().to_vec();
        assert!(s.len() == 3 && s[1] == 2, "magnitude expects [B, 2, P]");
        let (b, p) = (s[0], s[2]);
        let mut data = Vec::with_capacity(b * p);
        for x in v.data().chunks(2 * p) {
            data.extend((0..p).map(|k| x[k].hypot(x[p + k])));
        }
        let out = Tensor::from_vec(&[b, p], data).unwrap();
        self.push_op(out, &[a], move |ctx| {
            let mut g = Tensor::zeros(&s);
            let x = ctx.inputs[0].data();
            for bi in 0..b {
                for k in 0..p {
                    let mag = ctx.output.data()[bi * p + k];
                    if mag > T::zero() {
                        let gv = ctx.grad.data()[bi * p + k] / mag;
                        g.data_mut()[bi * 2 * p + k] = gv * x[bi * 2 * p + k];
                        g.data_mut()[bi * 2 * p + p + k] = gv * x[bi * 2 * p + p + k];
                    }
                }
            }
            vec![Some(g)]
        })
    }
}

fn transpose_blocks<T: Scalar>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (ob, ib) in out.chunks_mut(r * c).zip(x.chunks(r * c)) {
        for i in 0..r {
            for j in 0..c {
                ob[j * r + i] = ib[i * c + j];
            }
        }
    }
    out
}
