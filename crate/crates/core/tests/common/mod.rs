#![allow(dead_code)]

use pcgprobe::corpus::{Annotation, Event, HeartState};
use pcgprobe::nn::{check_gradients, Ctx, GradCheckOptions, Graph, NnError, ParamStore, Real, Tensor, Var};
use pcgprobe::probe::{build_probe, ProbeModel};
use pcgprobe::rng::Rng;

pub const PROBE_TARGETS: [usize; 4] = [3, 70, 140, 0];

pub fn rand_tensor<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape, |_| T::lit(rng.normal()))
}

/// Probe on 32×32 single-channel inputs, batch input and projection weights.
pub fn probe_fixture<T: Real>() -> (ProbeModel, ParamStore<T>, Tensor<T>, Tensor<T>) {
    let mut rng = Rng::new(3);
    let mut store = ParamStore::<T>::new();
    let model = build_probe(1, (32, 32), &mut store, &mut rng).unwrap();
    (model, store, rand_tensor(&[4, 1, 32, 32], 9), rand_tensor(&[4, 141], 10))
}

/// Train-mode probe objective: cross-entropy plus a random projection of the
/// logits, so every logit gets an O(1) cotangent.
pub fn probe_objective<T: Real>(
    model: &ProbeModel,
    w: &Tensor<T>,
    g: &Graph<T>,
    store: &mut ParamStore<T>,
    x: Var,
) -> Result<Var, NnError> {
    let mut rng = Rng::new(0);
    let mut ctx = Ctx::new(g, store, true, &mut rng);
    let logits = model
        .forward(&mut ctx, x)
        .map_err(|e| NnError::Invalid { op: "probe", msg: e.to_string() })?;
    let ce = g.cross_entropy(logits, &PROBE_TARGETS)?;
    let wv = g.constant(w.clone());
    let proj = g.mul(logits, wv)?;
    let proj = g.sum(proj)?;
    g.add(ce, proj)
}

/// Value of the probe objective on the fixture.
pub fn probe_loss<T: Real>() -> f64 {
    let (model, mut store, x, w) = probe_fixture::<T>();
    let g = Graph::new();
    let xv = g.input(x);
    let out = probe_objective(&model, &w, &g, &mut store, xv).unwrap();
    g.value(out).data()[0].f64()
}

/// Per-tensor finite-difference errors of the full probe, `step` overriding
/// the precision default.
pub fn probe_gradcheck<T: Real>(step: Option<f64>) -> Vec<(String, f64)> {
    let (model, mut store, x, w) = probe_fixture::<T>();
    check_gradients(
        &mut store,
        &[x],
        |g: &Graph<T>, store, v: &[Var]| probe_objective(&model, &w, g, store, v[0]),
        GradCheckOptions { samples: Some(24), seed: 1, step },
    )
    .unwrap()
    .per_tensor
}

pub fn worst(per: &[(String, f64)]) -> f64 {
    per.iter().map(|(_, e)| *e).fold(0.0, f64::max)
}

/// Reverse-mode gradients of the probe objective, keyed by tensor name.
pub fn probe_gradients<T: Real>() -> Vec<(String, Vec<f64>)> {
    let (model, mut store, x, w) = probe_fixture::<T>();
    let g = Graph::new();
    let xv = g.input(x);
    let out = probe_objective(&model, &w, &g, &mut store, xv).unwrap();
    let grads = g.backward(out).unwrap();
    let mut named: Vec<(String, Vec<f64>)> = grads
        .params()
        .map(|(id, t)| (store.param(id).name.clone(), t.data().iter().map(|v| v.f64()).collect()))
        .collect();
    named.push(("input0".into(), grads.get(xv).unwrap().data().iter().map(|v| v.f64()).collect()));
    named.sort_by(|a, b| a.0.cmp(&b.0));
    named
}

/// Random linear functional so every output element gets a distinct weight.
pub fn project<T: Real>(g: &Graph<T>, y: Var, seed: u64) -> pcgprobe::nn::Result<Var> {
    let w = g.constant(rand_tensor(&g.shape(y), seed ^ 0xABCD));
    let p = g.mul(y, w)?;
    g.sum(p)
}

pub type OpFn<T> = fn(&Graph<T>, &[Var]) -> pcgprobe::nn::Result<Var>;

pub fn op_cases<T: Real>() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn<T>)> {
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![3, 4], vec![3, 4]], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |g, v| g.mul(v[0], v[1])),
        ("scale", vec![vec![5]], |g, v| g.scale(v[0], -2.5)),
        ("mul_scalar", vec![vec![2, 3], vec![1]], |g, v| g.mul_scalar(v[0], v[1])),
        ("exp", vec![vec![2, 3]], |g, v| g.exp(v[0])),
        ("relu", vec![vec![4, 5]], |g, v| g.relu(v[0])),
        ("gelu", vec![vec![4, 5]], |g, v| g.gelu(v[0])),
        ("reshape", vec![vec![2, 6]], |g, v| g.reshape(v[0], &[3, 4])),
        ("permute", vec![vec![2, 3, 4]], |g, v| g.permute(v[0], &[2, 0, 1])),
        ("transpose", vec![vec![3, 5]], |g, v| g.transpose(v[0])),
        ("add_trailing", vec![vec![2, 3, 4], vec![3, 4]], |g, v| g.add_trailing(v[0], v[1])),
        ("add_channel", vec![vec![2, 3, 2, 2], vec![3]], |g, v| g.add_channel(v[0], v[1])),
        ("matmul", vec![vec![3, 4], vec![4, 5]], |g, v| g.matmul(v[0], v[1])),
        ("bmm", vec![vec![2, 3, 4], vec![2, 4, 5]], |g, v| g.bmm(v[0], v[1], false)),
        ("bmm_t", vec![vec![2, 3, 4], vec![2, 5, 4]], |g, v| g.bmm(v[0], v[1], true)),
        ("linear", vec![vec![2, 3, 4], vec![4, 5], vec![5]], |g, v| g.linear(v[0], v[1], Some(v[2]))),
        ("softmax", vec![vec![3, 6]], |g, v| g.softmax(v[0])),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        ("batch_norm", vec![vec![3, 2, 2, 3], vec![2], vec![2]], |g, v| {
            Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0)
        }),
        ("batch_norm_eval", vec![vec![3, 2, 4], vec![2], vec![2]], |g, v| {
            g.batch_norm_eval(v[0], v[1], v[2], &[T::lit(0.1), T::lit(-0.2)], &[T::lit(0.8), T::lit(1.5)], 1e-5)
        }),
        ("mean_axis", vec![vec![2, 3, 4]], |g, v| g.mean_axis(v[0], 1)),
        ("mean", vec![vec![2, 3]], |g, v| g.mean(v[0])),
        ("cross_entropy", vec![vec![4, 7]], |g, v| g.cross_entropy(v[0], &[0, 6, 3, 3])),
        ("mse", vec![vec![3, 4]], |g, v| {
            let t = rand_tensor(&[3, 4], 99);
            g.mse(v[0], &t, None)
        }),
        ("l2_normalize", vec![vec![3, 5]], |g, v| g.l2_normalize(v[0])),
        ("embedding_mean", vec![vec![6, 4]], |g, v| g.embedding_mean(v[0], &[vec![0, 2, 2], vec![5], vec![1, 3]])),
        ("mask_replace", vec![vec![2, 3, 4], vec![4]], |g, v| {
            g.mask_replace(v[0], v[1], &[true, false, false, true, true, false])
        }),
        ("conv2d", vec![vec![2, 2, 5, 6], vec![3, 2, 3, 2], vec![3]], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), (2, 1), (1, 1))
        }),
        ("conv1d", vec![vec![2, 3, 9], vec![4, 3, 7], vec![4]], |g, v| g.conv1d(v[0], v[1], Some(v[2]), 1, 3)),
        ("max_pool2d", vec![vec![2, 2, 7, 7]], |g, v| g.max_pool2d(v[0], (3, 3), (2, 2))),
        ("adaptive_avg_pool2d", vec![vec![1, 2, 7, 5]], |g, v| g.adaptive_avg_pool2d(v[0], 3, 6)),
    ]
}

/// `(op, worst relative error, per-tensor errors)` for every differentiable op,
/// each composed with a random projection to a scalar.
pub fn op_gradient_errors<T: Real>() -> Vec<(&'static str, f64, Vec<(String, f64)>)> {
    op_cases::<T>()
        .into_iter()
        .enumerate()
        .map(|(seed, (name, shapes, op))| {
            let inputs: Vec<Tensor<T>> =
                shapes.iter().enumerate().map(|(i, s)| rand_tensor(s, (seed * 10 + i) as u64)).collect();
            let mut store = ParamStore::<T>::new();
            let report = check_gradients(
                &mut store,
                &inputs,
                |g, _, v| {
                    let y = op(g, v)?;
                    project(g, y, seed as u64)
                },
                GradCheckOptions { samples: None, ..Default::default() },
            )
            .unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, report.max_rel_error(), report.per_tensor)
        })
        .collect()
}

/// Contiguous S1/systole/S2/diastole cycles of `period` seconds from 0 to `seconds`.
pub fn beat_annotation(seconds: f64, period: f64) -> Annotation {
    let mut events = Vec::new();
    let mut t = 0.0;
    while t + period <= seconds + 1e-9 {
        let q = period / 4.0;
        for (k, state) in [HeartState::S1, HeartState::Systole, HeartState::S2, HeartState::Diastole].into_iter().enumerate() {
            events.push(Event { onset: t + k as f64 * q, offset: t + (k + 1) as f64 * q, state });
        }
        t += period;
    }
    Annotation { events }
}
