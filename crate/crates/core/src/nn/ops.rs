//! Differentiable tensor operations recorded on a [`Graph`].

use super::graph::{Backward, Graph, Var};
use super::tensor::{gemm, numel, Real, Tensor};
use super::{NnError, Result};

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NnError {
    NnError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> NnError {
    NnError::Invalid { op, msg: msg.into() }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Real>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = t.shape();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n = t.len();
    let src = t.data();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; axes.len()];
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(src[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            offset += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::from_vec(out_shape, out).expect("permute preserves element count")
}

/// Per-row mean and inverse standard deviation over the trailing `width`.
fn row_stats<T: Real>(x: &[T], width: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let rows = x.len() / width;
    let mut means = Vec::with_capacity(rows);
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().map(|v| v.f64()).sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / width as f64;
        means.push(mean);
        inv.push(1.0 / (var + eps).sqrt());
    }
    (means, inv)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Real> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(std::rc::Rc<Tensor<T>>, std::rc::Rc<Tensor<T>>)> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op, av.shape(), bv.shape()));
        }
        Ok((av, bv))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("add", a, b)?;
        let out = av.zip_map(&bv, |x, y| x + y);
        self.record("add", &[a, b], out, Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.clone())]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("sub", a, b)?;
        let out = av.zip_map(&bv, |x, y| x - y);
        self.record(
            "sub",
            &[a, b],
            out,
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))]),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = self.same_shape("mul", a, b)?;
        let out = av.zip_map(&bv, |x, y| x * y);
        self.record(
            "mul",
            &[a, b],
            out,
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.zip_map(&c.inputs[1], |g, y| g * y)),
                    c.needs[1].then(|| c.grad.zip_map(&c.inputs[0], |g, x| g * x)),
                ]
            }),
        )
    }

    pub fn scale(&self, x: Var, factor: f64) -> Result<Var> {
        let f = T::lit(factor);
        let out = self.value(x).map(|v| v * f);
        self.record("scale", &[x], out, Box::new(move |c| vec![Some(c.grad.map(|g| g * f))]))
    }

    /// `x · s` for a single-element `s`.
    pub fn mul_scalar(&self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(shape_err("mul_scalar", &self.shape(x), sv.shape()));
        }
        let k = sv.item();
        let out = self.value(x).map(|v| v * k);
        self.record(
            "mul_scalar",
            &[x, s],
            out,
            Box::new(|c| {
                let k = c.inputs[1].item();
                let ds = c.needs[1].then(|| {
                    let sum: T = c.grad.data().iter().zip(c.inputs[0].data()).map(|(&g, &x)| g * x).sum();
                    Tensor::full(c.inputs[1].shape(), sum)
                });
                vec![c.needs[0].then(|| c.grad.map(|g| g * k)), ds]
            }),
        )
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.exp());
        self.record("exp", &[x], out, Box::new(|c| vec![Some(c.grad.zip_map(c.output, |g, y| g * y))]))
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.record(
            "relu",
            &[x],
            out,
            Box::new(|c| {
                vec![Some(c.grad.zip_map(&c.inputs[0], |g, x| if x > T::zero() { g } else { T::zero() }))]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| {
            let x = v.f64();
            T::lit(0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
        });
        self.record(
            "gelu",
            &[x],
            out,
            Box::new(|c| {
                vec![Some(c.grad.zip_map(&c.inputs[0], |g, v| {
                    let x = v.f64();
                    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                    let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    g * T::lit(d)
                }))]
            }),
        )
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let out = (*xv).clone().reshape(shape)?;
        let back = xv.shape().to_vec();
        self.record(
            "reshape",
            &[x],
            out,
            Box::new(move |c| vec![Some(c.grad.clone().reshape(&back).expect("same numel"))]),
        )
    }

    pub fn permute(&self, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted != (0..xv.ndim()).collect::<Vec<_>>() {
            return Err(invalid("permute", format!("{axes:?} is not a permutation of {} axes", xv.ndim())));
        }
        let out = permute_data(&xv, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.record("permute", &[x], out, Box::new(move |c| vec![Some(permute_data(c.grad, &inverse))]))
    }

    /// Swap the last two axes.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd < 2 {
            return Err(invalid("transpose", "need at least 2 axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 1, nd - 2);
        self.permute(x, &axes)
    }

    /// `x + b` where `b`'s shape equals the trailing dimensions of `x`.
    pub fn add_trailing(&self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let nd = bv.ndim();
        if nd > xv.ndim() || xv.shape()[xv.ndim() - nd..] != *bv.shape() {
            return Err(shape_err("add_trailing", xv.shape(), bv.shape()));
        }
        let inner = bv.len();
        let mut out = (*xv).clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (o, &v) in chunk.iter_mut().zip(bv.data()) {
                *o += v;
            }
        }
        self.record(
            "add_trailing",
            &[x, b],
            out,
            Box::new(move |c| {
                let db = c.needs[1].then(|| {
                    let mut acc = Tensor::zeros(c.inputs[1].shape());
                    for chunk in c.grad.data().chunks(inner) {
                        for (a, &g) in acc.data_mut().iter_mut().zip(chunk) {
                            *a += g;
                        }
                    }
                    acc
                });
                vec![Some(c.grad.clone()), db]
            }),
        )
    }

    /// Per-channel bias on `[N, C, ...]`.
    pub fn add_channel(&self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if xv.ndim() < 2 || bv.ndim() != 1 || bv.len() != xv.shape()[1] {
            return Err(shape_err("add_channel", xv.shape(), bv.shape()));
        }
        let ch = bv.len();
        let inner = numel(&xv.shape()[2..]);
        let mut out = (*xv).clone();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let v = bv.data()[i % ch];
            chunk.iter_mut().for_each(|o| *o += v);
        }
        self.record(
            "add_channel",
            &[x, b],
            out,
            Box::new(move |c| {
                let db = c.needs[1].then(|| {
                    let mut acc = vec![T::zero(); ch];
                    for (i, chunk) in c.grad.data().chunks(inner).enumerate() {
                        acc[i % ch] += chunk.iter().copied().sum::<T>();
                    }
                    Tensor::from_vec(vec![ch], acc).expect("bias shape")
                });
                vec![Some(c.grad.clone()), db]
            }),
        )
    }

    /// `[M, K] × [K, N]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(false, false, m, n, k, T::one(), av.data(), bv.data(), T::zero(), out.data_mut());
        self.record(
            "matmul",
            &[a, b],
            out,
            Box::new(move |c| {
                let (a, b, g) = (&c.inputs[0], &c.inputs[1], c.grad);
                let da = c.needs[0].then(|| {
                    let mut d = Tensor::zeros(&[m, k]);
                    gemm(false, true, m, k, n, T::one(), g.data(), b.data(), T::zero(), d.data_mut());
                    d
                });
                let db = c.needs[1].then(|| {
                    let mut d = Tensor::zeros(&[k, n]);
                    gemm(true, false, k, n, m, T::one(), a.data(), g.data(), T::zero(), d.data_mut());
                    d
                });
                vec![da, db]
            }),
        )
    }

    /// Batched `[B, M, K] × [B, K, N]`, or `× [B, N, K]ᵀ` when `trans_b`.
    pub fn bmm(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let ok = av.ndim() == 3 && bv.ndim() == 3 && av.shape()[0] == bv.shape()[0];
        let (batch, m, k) = if ok { (av.shape()[0], av.shape()[1], av.shape()[2]) } else { (0, 0, 0) };
        let (kb, n) = if trans_b && ok { (bv.shape()[2], bv.shape()[1]) } else if ok { (bv.shape()[1], bv.shape()[2]) } else { (1, 0) };
        if !ok || kb != k {
            return Err(shape_err("bmm", av.shape(), bv.shape()));
        }
        let mut out = Tensor::zeros(&[batch, m, n]);
        for i in 0..batch {
            gemm(
                false,
                trans_b,
                m,
                n,
                k,
                T::one(),
                &av.data()[i * m * k..],
                &bv.data()[i * k * n..],
                T::zero(),
                &mut out.data_mut()[i * m * n..(i + 1) * m * n],
            );
        }
        self.record(
            "bmm",
            &[a, b],
            out,
            Box::new(move |c| {
                let (a, b, g) = (&c.inputs[0], &c.inputs[1], c.grad);
                let da = c.needs[0].then(|| {
                    let mut d = Tensor::zeros(&[batch, m, k]);
                    for i in 0..batch {
                        // dA = G · op(B)ᵀ
                        gemm(
                            false,
                            !trans_b,
                            m,
                            k,
                            n,
                            T::one(),
                            &g.data()[i * m * n..],
                            &b.data()[i * k * n..],
                            T::zero(),
                            &mut d.data_mut()[i * m * k..(i + 1) * m * k],
                        );
                    }
                    d
                });
                let db = c.needs[1].then(|| {
                    let mut d = Tensor::zeros(b.shape());
                    for i in 0..batch {
                        let dst = &mut d.data_mut()[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            // d(Bᵀ) = Gᵀ A → [N, K]
                            gemm(true, false, n, k, m, T::one(), &g.data()[i * m * n..], &a.data()[i * m * k..], T::zero(), dst);
                        } else {
                            gemm(true, false, k, n, m, T::one(), &a.data()[i * m * k..], &g.data()[i * m * n..], T::zero(), dst);
                        }
                    }
                    d
                });
                vec![da, db]
            }),
        )
    }

    /// `x · W + b` over the last axis, `W: [in, out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.ndim() != 2 || xv.ndim() == 0 || *xv.shape().last().unwrap() != wv.shape()[0] {
            return Err(shape_err("linear", xv.shape(), wv.shape()));
        }
        let (din, dout) = (wv.shape()[0], wv.shape()[1]);
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [dout] {
                return Err(shape_err("linear bias", &[dout], &bs));
            }
        }
        let rows = xv.len() / din;
        let mut out_shape = xv.shape().to_vec();
        *out_shape.last_mut().unwrap() = dout;
        let mut out = Tensor::zeros(&out_shape);
        gemm(false, false, rows, dout, din, T::one(), xv.data(), wv.data(), T::zero(), out.data_mut());
        let mut parents = vec![x, w];
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.data_mut().chunks_mut(dout) {
                for (o, &v) in row.iter_mut().zip(bv.data()) {
                    *o += v;
                }
            }
            parents.push(b);
        }
        self.record(
            "linear",
            &parents,
            out,
            Box::new(move |c| {
                let (x, w, g) = (&c.inputs[0], &c.inputs[1], c.grad);
                let dx = c.needs[0].then(|| {
                    let mut d = Tensor::zeros(x.shape());
                    gemm(false, true, rows, din, dout, T::one(), g.data(), w.data(), T::zero(), d.data_mut());
                    d
                });
                let dw = c.needs[1].then(|| {
                    let mut d = Tensor::zeros(&[din, dout]);
                    gemm(true, false, din, dout, rows, T::one(), x.data(), g.data(), T::zero(), d.data_mut());
                    d
                });
                let mut grads = vec![dx, dw];
                if c.inputs.len() == 3 {
                    grads.push(c.needs[2].then(|| {
                        let mut acc = vec![T::zero(); dout];
                        for row in g.data().chunks(dout) {
                            for (a, &v) in acc.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        Tensor::from_vec(vec![dout], acc).expect("bias shape")
                    }));
                }
                grads
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let width = *xv.shape().last().ok_or_else(|| invalid("softmax", "scalar input"))?;
        let mut out = (*xv).clone();
        for row in out.data_mut().chunks_mut(width) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        self.record(
            "softmax",
            &[x],
            out,
            Box::new(move |c| {
                let mut d = c.grad.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(width).zip(c.output.data().chunks(width)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                    for (dv, &y) in drow.iter_mut().zip(yrow) {
                        *dv = y * (*dv - dot);
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let width = *xv.shape().last().ok_or_else(|| invalid("layer_norm", "scalar input"))?;
        if gv.shape() != [width] || bv.shape() != [width] {
            return Err(shape_err("layer_norm", xv.shape(), gv.shape()));
        }
        let (means, inv) = row_stats(xv.data(), width, eps);
        let mut out = Tensor::zeros(xv.shape());
        for (r, (orow, xrow)) in out.data_mut().chunks_mut(width).zip(xv.data().chunks(width)).enumerate() {
            for i in 0..width {
                let xhat = (xrow[i].f64() - means[r]) * inv[r];
                orow[i] = T::lit(xhat) * gv.data()[i] + bv.data()[i];
            }
        }
        self.record(
            "layer_norm",
            &[x, gamma, beta],
            out,
            Box::new(move |c| {
                let (x, gamma, g) = (&c.inputs[0], &c.inputs[1], c.grad);
                let mut dx = Tensor::zeros(x.shape());
                let mut dgamma = vec![0.0; width];
                let mut dbeta = vec![0.0; width];
                for r in 0..means.len() {
                    let xrow = &x.data()[r * width..(r + 1) * width];
                    let grow = &g.data()[r * width..(r + 1) * width];
                    let xhat: Vec<f64> = xrow.iter().map(|v| (v.f64() - means[r]) * inv[r]).collect();
                    let dxhat: Vec<f64> = grow.iter().zip(gamma.data()).map(|(g, w)| g.f64() * w.f64()).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / width as f64;
                    let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / width as f64;
                    for i in 0..width {
                        dx.data_mut()[r * width + i] = T::lit(inv[r] * (dxhat[i] - mean_d - xhat[i] * mean_dx));
                        dgamma[i] += grow[i].f64() * xhat[i];
                        dbeta[i] += grow[i].f64();
                    }
                }
                let to_t = |v: Vec<f64>| Tensor::from_vec(vec![width], v.into_iter().map(T::lit).collect()).expect("width");
                vec![Some(dx), c.needs[1].then(|| to_t(dgamma)), c.needs[2].then(|| to_t(dbeta))]
            }),
        )
    }

    /// Batch normalization on `[N, C, ...]` using batch statistics.
    /// Returns the output and the per-channel batch mean and population variance.
    pub fn batch_norm_train(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        if xv.ndim() < 2 {
            return Err(invalid("batch_norm", format!("need [N, C, ...], got {:?}", xv.shape())));
        }
        let (n, ch) = (xv.shape()[0], xv.shape()[1]);
        if n < 2 {
            return Err(NnError::BatchTooSmall(n));
        }
        if gv.shape() != [ch] || bv.shape() != [ch] {
            return Err(shape_err("batch_norm", xv.shape(), gv.shape()));
        }
        let inner = numel(&xv.shape()[2..]);
        let count = (n * inner) as f64;
        let mut mean = vec![0.0; ch];
        let mut var = vec![0.0; ch];
        for (i, chunk) in xv.data().chunks(inner).enumerate() {
            mean[i % ch] += chunk.iter().map(|v| v.f64()).sum::<f64>();
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for (i, chunk) in xv.data().chunks(inner).enumerate() {
            let m = mean[i % ch];
            var[i % ch] += chunk.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>();
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = Tensor::zeros(xv.shape());
        for (i, (o, chunk)) in out.data_mut().chunks_mut(inner).zip(xv.data().chunks(inner)).enumerate() {
            let c = i % ch;
            let (g, b) = (gv.data()[c].f64(), bv.data()[c].f64());
            for (ov, xv) in o.iter_mut().zip(chunk) {
                *ov = T::lit((xv.f64() - mean[c]) * inv[c] * g + b);
            }
        }
        let (mean_c, inv_c) = (mean.clone(), inv);
        let v = self.record(
            "batch_norm",
            &[x, gamma, beta],
            out,
            Box::new(move |c| {
                let (x, gamma, g) = (&c.inputs[0], &c.inputs[1], c.grad);
                let mut sum_d = vec![0.0; ch];
                let mut sum_dx = vec![0.0; ch];
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for (i, (xc, gc)) in x.data().chunks(inner).zip(g.data().chunks(inner)).enumerate() {
                    let k = i % ch;
                    let w = gamma.data()[k].f64();
                    for (xv, gv) in xc.iter().zip(gc) {
                        let xhat = (xv.f64() - mean_c[k]) * inv_c[k];
                        let gv = gv.f64();
                        sum_d[k] += gv * w;
                        sum_dx[k] += gv * w * xhat;
                        dgamma[k] += gv * xhat;
                        dbeta[k] += gv;
                    }
                }
                let mut dx = Tensor::zeros(x.shape());
                for (i, (d, (xc, gc))) in dx
                    .data_mut()
                    .chunks_mut(inner)
                    .zip(x.data().chunks(inner).zip(g.data().chunks(inner)))
                    .enumerate()
                {
                    let k = i % ch;
                    let w = gamma.data()[k].f64();
                    let (md, mdx) = (sum_d[k] / count, sum_dx[k] / count);
                    for ((dv, xv), gv) in d.iter_mut().zip(xc).zip(gc) {
                        let xhat = (xv.f64() - mean_c[k]) * inv_c[k];
                        *dv = T::lit(inv_c[k] * (gv.f64() * w - md - xhat * mdx));
                    }
                }
                let to_t = |v: Vec<f64>| Tensor::from_vec(vec![ch], v.into_iter().map(T::lit).collect()).expect("channels");
                vec![Some(dx), c.needs[1].then(|| to_t(dgamma)), c.needs[2].then(|| to_t(dbeta))]
            }),
        )?;
        Ok((v, mean, var))
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(&self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        if xv.ndim() < 2 || gv.shape() != [xv.shape()[1]] || mean.len() != gv.len() || var.len() != gv.len() {
            return Err(shape_err("batch_norm_eval", xv.shape(), gv.shape()));
        }
        let ch = gv.len();
        let inner = numel(&xv.shape()[2..]);
        let mean: Vec<f64> = mean.iter().map(|v| v.f64()).collect();
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v.f64() + eps).sqrt()).collect();
        let mut out = Tensor::zeros(xv.shape());
        for (i, (o, chunk)) in out.data_mut().chunks_mut(inner).zip(xv.data().chunks(inner)).enumerate() {
            let c = i % ch;
            let (g, b) = (gv.data()[c].f64(), bv.data()[c].f64());
            for (ov, x) in o.iter_mut().zip(chunk) {
                *ov = T::lit((x.f64() - mean[c]) * inv[c] * g + b);
            }
        }
        self.record(
            "batch_norm_eval",
            &[x, gamma, beta],
            out,
            Box::new(move |c| {
                let (x, gamma, g) = (&c.inputs[0], &c.inputs[1], c.grad);
                let mut dx = Tensor::zeros(x.shape());
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for (i, (d, (xc, gc))) in dx
                    .data_mut()
                    .chunks_mut(inner)
                    .zip(x.data().chunks(inner).zip(g.data().chunks(inner)))
                    .enumerate()
                {
                    let k = i % ch;
                    let w = gamma.data()[k].f64();
                    for ((dv, xv), gv) in d.iter_mut().zip(xc).zip(gc) {
                        let gv = gv.f64();
                        *dv = T::lit(gv * w * inv[k]);
                        dgamma[k] += gv * (xv.f64() - mean[k]) * inv[k];
                        dbeta[k] += gv;
                    }
                }
                let to_t = |v: Vec<f64>| Tensor::from_vec(vec![ch], v.into_iter().map(T::lit).collect()).expect("channels");
                vec![Some(dx), c.needs[1].then(|| to_t(dgamma)), c.needs[2].then(|| to_t(dbeta))]
            }),
        )
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(invalid("mean_axis", format!("axis {axis} out of range for {:?}", xv.shape())));
        }
        let shape = xv.shape().to_vec();
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut acc = vec![0.0f64; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xv.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in acc[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s.f64();
                }
            }
        }
        let data = acc.into_iter().map(|v| T::lit(v / len as f64)).collect();
        let out = Tensor::from_vec(out_shape, data)?;
        let scale = T::lit(1.0 / len as f64);
        self.record(
            "mean_axis",
            &[x],
            out,
            Box::new(move |c| {
                let mut d = Tensor::zeros(&shape);
                for o in 0..outer {
                    let g = &c.grad.data()[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        let dst = &mut d.data_mut()[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (dv, &gv) in dst.iter_mut().zip(g) {
                            *dv = gv * scale;
                        }
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = T::lit(xv.data().iter().map(|v| v.f64()).sum());
        let shape = xv.shape().to_vec();
        self.record(
            "sum",
            &[x],
            Tensor::scalar(s),
            Box::new(move |c| vec![Some(Tensor::full(&shape, c.grad.item()))]),
        )
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean cross-entropy of `[A, B]` logits against class indices.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.ndim() != 2 || lv.shape()[0] != targets.len() || targets.is_empty() {
            return Err(shape_err("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let (rows, classes) = (lv.shape()[0], lv.shape()[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(NnError::LabelOutOfRange { label: bad, classes });
        }
        let mut probs = vec![0.0f64; rows * classes];
        let mut loss = 0.0;
        for (r, row) in lv.data().chunks(classes).enumerate() {
            let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v.f64() - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[targets[r]].f64();
            for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v.f64() - lse).exp();
            }
        }
        let targets = targets.to_vec();
        self.record(
            "cross_entropy",
            &[logits],
            Tensor::scalar(T::lit(loss / rows as f64)),
            Box::new(move |c| {
                let g = c.grad.item().f64() / rows as f64;
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * classes + t] -= 1.0;
                }
                let data = d.into_iter().map(|v| T::lit(v * g)).collect();
                vec![Some(Tensor::from_vec(vec![rows, classes], data).expect("logit shape"))]
            }),
        )
    }

    /// Mean squared error against a constant target, optionally weighted per element.
    pub fn mse(&self, pred: Var, target: &Tensor<T>, weights: Option<&[T]>) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(shape_err("mse", pv.shape(), target.shape()));
        }
        let w: Vec<f64> = match weights {
            Some(w) if w.len() != pv.len() => return Err(shape_err("mse weights", pv.shape(), &[w.len()])),
            Some(w) => w.iter().map(|v| v.f64()).collect(),
            None => vec![1.0; pv.len()],
        };
        let norm: f64 = w.iter().sum();
        if norm <= 0.0 {
            return Err(invalid("mse", "weights sum to zero"));
        }
        let diff: Vec<f64> = pv.data().iter().zip(target.data()).map(|(p, t)| p.f64() - t.f64()).collect();
        let loss = diff.iter().zip(&w).map(|(d, w)| w * d * d).sum::<f64>() / norm;
        self.record(
            "mse",
            &[pred],
            Tensor::scalar(T::lit(loss)),
            Box::new(move |c| {
                let g = c.grad.item().f64();
                let data = diff.iter().zip(&w).map(|(d, w)| T::lit(2.0 * w * d * g / norm)).collect();
                vec![Some(Tensor::from_vec(c.inputs[0].shape().to_vec(), data).expect("pred shape"))]
            }),
        )
    }

    /// Scale every row of `[N, D]` to unit L2 norm.
    pub fn l2_normalize(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let width = *xv.shape().last().ok_or_else(|| invalid("l2_normalize", "scalar input"))?;
        let norms: Vec<f64> = xv
            .data()
            .chunks(width)
            .map(|r| r.iter().map(|v| v.f64().powi(2)).sum::<f64>().sqrt().max(1e-12))
            .collect();
        let mut out = (*xv).clone();
        for (row, n) in out.data_mut().chunks_mut(width).zip(&norms) {
            row.iter_mut().for_each(|v| *v = T::lit(v.f64() / n));
        }
        self.record(
            "l2_normalize",
            &[x],
            out,
            Box::new(move |c| {
                let mut d = c.grad.clone();
                for ((drow, yrow), n) in d.data_mut().chunks_mut(width).zip(c.output.data().chunks(width)).zip(&norms) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(g, y)| g.f64() * y.f64()).sum();
                    for (dv, y) in drow.iter_mut().zip(yrow) {
                        *dv = T::lit((dv.f64() - y.f64() * dot) / n);
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    /// Mean of table rows per bag: `[V, D]` → `[bags, D]`.
    pub fn embedding_mean(&self, table: Var, bags: &[Vec<usize>]) -> Result<Var> {
        let tv = self.value(table);
        if tv.ndim() != 2 {
            return Err(invalid("embedding_mean", format!("table must be 2-D, got {:?}", tv.shape())));
        }
        let (vocab, dim) = (tv.shape()[0], tv.shape()[1]);
        for bag in bags {
            if bag.is_empty() {
                return Err(invalid("embedding_mean", "empty bag"));
            }
            if let Some(&bad) = bag.iter().find(|&&i| i >= vocab) {
                return Err(invalid("embedding_mean", format!("token {bad} outside vocabulary of {vocab}")));
            }
        }
        let mut out = Tensor::zeros(&[bags.len(), dim]);
        for (b, bag) in bags.iter().enumerate() {
            let scale = T::lit(1.0 / bag.len() as f64);
            let dst = &mut out.data_mut()[b * dim..(b + 1) * dim];
            for &id in bag {
                for (d, &v) in dst.iter_mut().zip(&tv.data()[id * dim..(id + 1) * dim]) {
                    *d += v * scale;
                }
            }
        }
        let bags = bags.to_vec();
        self.record(
            "embedding_mean",
            &[table],
            out,
            Box::new(move |c| {
                let mut d = Tensor::zeros(&[vocab, dim]);
                for (b, bag) in bags.iter().enumerate() {
                    let scale = T::lit(1.0 / bag.len() as f64);
                    let g = &c.grad.data()[b * dim..(b + 1) * dim];
                    for &id in bag {
                        for (dv, &gv) in d.data_mut()[id * dim..(id + 1) * dim].iter_mut().zip(g) {
                            *dv += gv * scale;
                        }
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    /// Replace masked token rows of `[N, T, D]` with a shared `[D]` vector.
    pub fn mask_replace(&self, x: Var, token: Var, mask: &[bool]) -> Result<Var> {
        let (xv, tv) = (self.value(x), self.value(token));
        let dim = *xv.shape().last().ok_or_else(|| invalid("mask_replace", "scalar input"))?;
        if tv.shape() != [dim] || mask.len() * dim != xv.len() {
            return Err(shape_err("mask_replace", xv.shape(), tv.shape()));
        }
        let mut out = (*xv).clone();
        for (row, &m) in out.data_mut().chunks_mut(dim).zip(mask) {
            if m {
                row.copy_from_slice(tv.data());
            }
        }
        let mask = mask.to_vec();
        self.record(
            "mask_replace",
            &[x, token],
            out,
            Box::new(move |c| {
                let mut dx = c.grad.clone();
                let mut dt = vec![T::zero(); dim];
                for (row, &m) in dx.data_mut().chunks_mut(dim).zip(&mask) {
                    if m {
                        for (a, v) in dt.iter_mut().zip(row.iter_mut()) {
                            *a += *v;
                            *v = T::zero();
                        }
                    }
                }
                vec![Some(dx), c.needs[1].then(|| Tensor::from_vec(vec![dim], dt).expect("token shape"))]
            }),
        )
    }
}

#[allow(dead_code)]
fn _assert_backward_is_object_safe<T: Real>(_: &Backward<'_, T>) {}
