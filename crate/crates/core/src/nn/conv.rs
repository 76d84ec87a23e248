//! Convolution and pooling on `[N, C, H, W]` tensors.

use super::graph::{Graph, Var};
use super::tensor::{gemm, Real, Tensor};
use super::{NnError, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn out_len(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = len + 2 * p;
    (k <= padded && k > 0 && s > 0).then(|| (padded - k) / s + 1)
}

/// Unfold one `[C, H, W]` sample into `[C·kh·kw, OH·OW]`.
fn im2col<T: Real>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let pos = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * pos..(row + 1) * pos];
                for oi in 0..g.oh {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    let out_row = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    if ii < 0 || ii >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + ii as usize) * g.w..(c * g.h + ii as usize + 1) * g.w];
                    for (oj, o) in out_row.iter_mut().enumerate() {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        *o = if jj < 0 || jj >= g.w as isize { T::zero() } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into a `[C, H, W]` sample.
fn col2im<T: Real>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let pos = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * pos..(row + 1) * pos];
                for oi in 0..g.oh {
                    let ii = (oi * g.sh + ki) as isize - g.ph as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.ow {
                        let jj = (oj * g.sw + kj) as isize - g.pw as isize;
                        if jj >= 0 && (jj as usize) < g.w {
                            x[base + jj as usize] += src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// 2-D cross-correlation. `x: [N, C, H, W]`, `kernel: [F, C, kh, kw]`, optional `bias: [F]`.
    pub fn conv2d(&self, x: Var, kernel: Var, bias: Option<Var>, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        let mismatch = || NnError::Shape {
            op: "conv2d",
            lhs: xv.shape().to_vec(),
            rhs: kv.shape().to_vec(),
        };
        if xv.ndim() != 4 || kv.ndim() != 4 || xv.shape()[1] != kv.shape()[1] {
            return Err(mismatch());
        }
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (f, kh, kw) = (kv.shape()[0], kv.shape()[2], kv.shape()[3]);
        let (Some(oh), Some(ow)) = (out_len(h, kh, stride.0, padding.0), out_len(w, kw, stride.1, padding.1)) else {
            return Err(mismatch());
        };
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(NnError::Shape { op: "conv2d bias", lhs: vec![f], rhs: self.shape(b) });
            }
        }
        let g = Geometry { c, h, w, kh, kw, sh: stride.0, sw: stride.1, ph: padding.0, pw: padding.1, oh, ow };
        let (patch, pos) = (g.patch(), g.positions());
        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        let mut cols = vec![T::zero(); patch * pos];
        for s in 0..n {
            im2col(&xv.data()[s * c * h * w..(s + 1) * c * h * w], &g, &mut cols);
            gemm(false, false, f, pos, patch, T::one(), kv.data(), &cols, T::zero(), &mut out.data_mut()[s * f * pos..(s + 1) * f * pos]);
        }
        let mut parents = vec![x, kernel];
        if let Some(b) = bias {
            let bv = self.value(b);
            for (i, chunk) in out.data_mut().chunks_mut(pos).enumerate() {
                let v = bv.data()[i % f];
                chunk.iter_mut().for_each(|o| *o += v);
            }
            parents.push(b);
        }
        self.record(
            "conv2d",
            &parents,
            out,
            Box::new(move |ctx| {
                let (x, k, grad) = (&ctx.inputs[0], &ctx.inputs[1], ctx.grad);
                let mut dx = ctx.needs[0].then(|| Tensor::zeros(x.shape()));
                let mut dk = ctx.needs[1].then(|| Tensor::zeros(k.shape()));
                let mut cols = vec![T::zero(); patch * pos];
                for s in 0..n {
                    let gs = &grad.data()[s * f * pos..(s + 1) * f * pos];
                    if let Some(dk) = dk.as_mut() {
                        im2col(&x.data()[s * c * h * w..(s + 1) * c * h * w], &g, &mut cols);
                        gemm(false, true, f, patch, pos, T::one(), gs, &cols, T::one(), dk.data_mut());
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(true, false, patch, pos, f, T::one(), k.data(), gs, T::zero(), &mut cols);
                        col2im(&cols, &g, &mut dx.data_mut()[s * c * h * w..(s + 1) * c * h * w]);
                    }
                }
                let mut grads = vec![dx, dk];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs[2].then(|| {
                        let mut db = vec![T::zero(); f];
                        for (i, chunk) in grad.data().chunks(pos).enumerate() {
                            db[i % f] += chunk.iter().copied().sum::<T>();
                        }
                        Tensor::from_vec(vec![f], db).expect("bias shape")
                    }));
                }
                grads
            }),
        )
    }

    /// 1-D cross-correlation. `x: [N, C, L]`, `kernel: [F, C, k]`.
    pub fn conv1d(&self, x: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(x), self.shape(kernel));
        if xs.len() != 3 || ks.len() != 3 {
            return Err(NnError::Shape { op: "conv1d", lhs: xs, rhs: ks });
        }
        let x4 = self.reshape(x, &[xs[0], xs[1], 1, xs[2]])?;
        let k4 = self.reshape(kernel, &[ks[0], ks[1], 1, ks[2]])?;
        let y = self.conv2d(x4, k4, bias, (1, stride), (0, padding)).map_err(|e| match e {
            NnError::Shape { op: "conv2d", .. } => NnError::Shape { op: "conv1d", lhs: xs.clone(), rhs: ks.clone() },
            other => other,
        })?;
        let ys = self.shape(y);
        self.reshape(y, &[ys[0], ys[1], ys[3]])
    }

    /// Max pooling without padding. Ties route the gradient to the first index.
    pub fn max_pool2d(&self, x: Var, window: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 4 {
            return Err(NnError::Invalid { op: "max_pool2d", msg: format!("need [N, C, H, W], got {:?}", xv.shape()) });
        }
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (Some(oh), Some(ow)) = (out_len(h, window.0, stride.0, 0), out_len(w, window.1, stride.1, 0)) else {
            return Err(NnError::Invalid {
                op: "max_pool2d",
                msg: format!("window {window:?} larger than input {h}x{w}"),
            });
        };
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &xv.data()[plane * h * w..(plane + 1) * h * w];
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = plane * h * w + oi * stride.0 * w + oj * stride.1;
                    let mut best_v = src[best - plane * h * w];
                    for di in 0..window.0 {
                        for dj in 0..window.1 {
                            let idx = (oi * stride.0 + di) * w + oj * stride.1 + dj;
                            if src[idx] > best_v {
                                best_v = src[idx];
                                best = plane * h * w + idx;
                            }
                        }
                    }
                    let o = (plane * oh + oi) * ow + oj;
                    out.data_mut()[o] = best_v;
                    argmax[o] = best;
                }
            }
        }
        self.record(
            "max_pool2d",
            &[x],
            out,
            Box::new(move |ctx| {
                let mut dx = Tensor::zeros(ctx.inputs[0].shape());
                for (&src, &g) in argmax.iter().zip(ctx.grad.data()) {
                    dx.data_mut()[src] += g;
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Adaptive average pooling to `[N, C, oh, ow]` with bins
    /// `[floor(i·H/oh), ceil((i+1)·H/oh))`.
    pub fn adaptive_avg_pool2d(&self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 4 || oh == 0 || ow == 0 {
            return Err(NnError::Invalid { op: "adaptive_avg_pool2d", msg: format!("need [N, C, H, W], got {:?}", xv.shape()) });
        }
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let bins = |len: usize, out: usize| -> Vec<(usize, usize)> {
            (0..out).map(|i| (i * len / out, ((i + 1) * len).div_ceil(out))).collect()
        };
        let (rows, cols) = (bins(h, oh), bins(w, ow));
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for plane in 0..n * c {
            let src = &xv.data()[plane * h * w..(plane + 1) * h * w];
            for (oi, &(r0, r1)) in rows.iter().enumerate() {
                for (oj, &(c0, c1)) in cols.iter().enumerate() {
                    let mut sum = T::zero();
                    for i in r0..r1 {
                        for j in c0..c1 {
                            sum += src[i * w + j];
                        }
                    }
                    out.data_mut()[(plane * oh + oi) * ow + oj] = sum / T::lit(((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
        self.record(
            "adaptive_avg_pool2d",
            &[x],
            out,
            Box::new(move |ctx| {
                let mut dx = Tensor::zeros(ctx.inputs[0].shape());
                for plane in 0..n * c {
                    for (oi, &(r0, r1)) in rows.iter().enumerate() {
                        for (oj, &(c0, c1)) in cols.iter().enumerate() {
                            let g = ctx.grad.data()[(plane * oh + oi) * ow + oj] / T::lit(((r1 - r0) * (c1 - c0)) as f64);
                            for i in r0..r1 {
                                for j in c0..c1 {
                                    dx.data_mut()[plane * h * w + i * w + j] += g;
                                }
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }
}
