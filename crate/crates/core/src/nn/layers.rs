use super::graph::{Graph, Var};
use super::params::{init, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use super::{NnError, Result};
use crate::rng::Rng;

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a, T: Real = f32> {
    pub graph: &'a Graph<T>,
    pub store: &'a mut ParamStore<T>,
    /// Train mode: batch statistics, active dropout, running-stat updates.
    pub train: bool,
    /// Whether parameter gradients are recorded.
    pub track: bool,
    pub rng: &'a mut Rng,
    bound: Vec<Option<Var>>,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub fn new(graph: &'a Graph<T>, store: &'a mut ParamStore<T>, train: bool, rng: &'a mut Rng) -> Self {
        let bound = vec![None; store.len()];
        Self { graph, store, train, track: true, rng, bound }
    }

    /// Inference: eval mode, no parameter gradients.
    pub fn frozen(graph: &'a Graph<T>, store: &'a mut ParamStore<T>, rng: &'a mut Rng) -> Self {
        let mut ctx = Self::new(graph, store, false, rng);
        ctx.track = false;
        ctx
    }

    /// Graph handle for a parameter, bound once per pass.
    pub fn param(&mut self, id: ParamId) -> Var {
        if self.bound.len() <= id.index() {
            self.bound.resize(id.index() + 1, None);
        }
        *self.bound[id.index()].get_or_insert_with(|| self.store.bind(self.graph, id, self.track))
    }
}

/// Inverted dropout; identity outside train mode.
pub fn dropout<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, p: f64) -> Result<Var> {
    if !ctx.train || p <= 0.0 {
        return Ok(x);
    }
    let shape = ctx.graph.shape(x);
    let keep = T::lit(1.0 / (1.0 - p));
    let rng = &mut *ctx.rng;
    let mask = Tensor::from_fn(&shape, |_| if rng.uniform() < p { T::zero() } else { keep });
    let m = ctx.graph.constant(mask);
    ctx.graph.mul(x, m)
}

/// `y = x W + b`, `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// U(±1/√d_in) weights, zero bias.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let w = init::fan_in_uniform(&[d_in, d_out], d_in, rng);
        Self::with_weight(store, name, w, true)
    }

    /// Truncated-normal (σ = 0.02) weights, zero bias.
    pub fn new_trunc<T: Real>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let w = init::truncated_normal(&[d_in, d_out], 0.02, rng);
        Self::with_weight(store, name, w, true)
    }

    pub fn with_weight<T: Real>(store: &mut ParamStore<T>, name: &str, w: Tensor<T>, bias: bool) -> Self {
        let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
        let weight = store.add(&format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(&format!("{name}.bias"), init::zeros(&[d_out])));
        Self { weight, bias, d_in, d_out }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut Rng,
    ) -> Self {
        let mut conv = Self::new_without_bias(store, name, c_in, c_out, kernel, stride, padding, rng);
        conv.bias = Some(store.add(&format!("{name}.bias"), init::zeros(&[c_out])));
        conv
    }

    /// For convolutions followed by batch norm, where a bias has no effect.
    #[allow(clippy::too_many_arguments)]
    pub fn new_without_bias<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut Rng,
    ) -> Self {
        let shape = [c_out, c_in, kernel.0, kernel.1];
        let weight = store.add(&format!("{name}.weight"), init::fan_in_uniform(&shape, init::fan_in(&shape), rng));
        Self { weight, bias: None, stride, padding }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: usize,
}

impl Conv1d {
    /// He-uniform weights, zero bias.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, kernel: usize, padding: usize, rng: &mut Rng) -> Self {
        let shape = [c_out, c_in, kernel];
        let weight = store.add(&format!("{name}.weight"), init::he_uniform(&shape, init::fan_in(&shape), rng));
        let bias = store.add(&format!("{name}.bias"), init::zeros(&[c_out]));
        Self { weight, bias, padding }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.weight), ctx.param(self.bias));
        ctx.graph.conv1d(x, w, Some(b), 1, self.padding)
    }
}

/// Batch normalization over axis 1 with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), init::ones(&[channels])),
            beta: store.add(&format!("{name}.beta"), init::zeros(&[channels])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), init::zeros(&[channels])),
            running_var: store.add_buffer(&format!("{name}.running_var"), init::ones(&[channels])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        if ctx.train {
            let (y, mean, var) = ctx.graph.batch_norm_train(x, g, b, self.eps)?;
            let shape = ctx.graph.shape(x);
            let count = (shape[0] * shape[2..].iter().product::<usize>()) as f64;
            // Running variance tracks the unbiased estimate.
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = self.momentum;
            let rm = ctx.store.value_mut(self.running_mean);
            for (r, v) in rm.data_mut().iter_mut().zip(&mean) {
                *r = T::lit((1.0 - m) * r.f64() + m * v);
            }
            let rv = ctx.store.value_mut(self.running_var);
            for (r, v) in rv.data_mut().iter_mut().zip(&var) {
                *r = T::lit((1.0 - m) * r.f64() + m * v * unbias);
            }
            Ok(y)
        } else {
            let mean = ctx.store.get(self.running_mean).data().to_vec();
            let var = ctx.store.get(self.running_var).data().to_vec();
            ctx.graph.batch_norm_eval(x, g, b, &mean, &var, self.eps)
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), init::ones(&[width])),
            beta: store.add(&format!("{name}.beta"), init::zeros(&[width])),
            eps: 1e-5,
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        ctx.graph.layer_norm(x, g, b, self.eps)
    }
}

/// Multi-head self-attention with separate query, key and value projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(NnError::Invalid {
                op: "attention",
                msg: format!("dimension {dim} not divisible by {heads} heads"),
            });
        }
        Ok(Self {
            q: Linear::new_trunc(store, &format!("{name}.q"), dim, dim, rng),
            // A key bias only shifts every score of a query equally, so it is omitted.
            k: Linear::with_weight(store, &format!("{name}.k"), init::truncated_normal(&[dim, dim], 0.02, rng), false),
            v: Linear::new_trunc(store, &format!("{name}.v"), dim, dim, rng),
            out: Linear::new_trunc(store, &format!("{name}.out"), dim, dim, rng),
            heads,
            dim,
        })
    }

    /// `x: [N, T, D]` → output `[N, T, D]` and attention weights `[N·heads, T, T]`.
    pub fn forward_with_weights<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<(Var, Var)> {
        let s = ctx.graph.shape(x);
        if s.len() != 3 || s[2] != self.dim {
            return Err(NnError::Shape { op: "attention", lhs: s, rhs: vec![self.dim] });
        }
        let (n, t, h) = (s[0], s[1], self.heads);
        let dh = self.dim / h;
        let split = |ctx: &mut Ctx<'_, T>, v: Var| -> Result<Var> {
            let v = ctx.graph.reshape(v, &[n, t, h, dh])?;
            let v = ctx.graph.permute(v, &[0, 2, 1, 3])?;
            ctx.graph.reshape(v, &[n * h, t, dh])
        };
        let q = self.q.forward(ctx, x)?;
        let q = split(ctx, q)?;
        let k = self.k.forward(ctx, x)?;
        let k = split(ctx, k)?;
        let v = self.v.forward(ctx, x)?;
        let v = split(ctx, v)?;
        let scores = ctx.graph.bmm(q, k, true)?;
        let scores = ctx.graph.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = ctx.graph.softmax(scores)?;
        let y = ctx.graph.bmm(weights, v, false)?;
        let y = ctx.graph.reshape(y, &[n, h, t, dh])?;
        let y = ctx.graph.permute(y, &[0, 2, 1, 3])?;
        let y = ctx.graph.reshape(y, &[n, t, self.dim])?;
        Ok((self.out.forward(ctx, y)?, weights))
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(ctx, x)?.0)
    }
}

/// Pre-norm transformer block: `x + MHSA(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub const MLP_RATIO: usize = 4;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            fc1: Linear::new_trunc(store, &format!("{name}.fc1"), dim, dim * Self::MLP_RATIO, rng),
            fc2: Linear::new_trunc(store, &format!("{name}.fc2"), dim * Self::MLP_RATIO, dim, rng),
        })
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(ctx, x)?;
        let a = self.attn.forward(ctx, h)?;
        let x = ctx.graph.add(x, a)?;
        let h = self.ln2.forward(ctx, x)?;
        let h = self.fc1.forward(ctx, h)?;
        let h = ctx.graph.gelu(h)?;
        let h = self.fc2.forward(ctx, h)?;
        ctx.graph.add(x, h)
    }
}
