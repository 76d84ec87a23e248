//! Finite-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use super::Result;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Coordinates probed per tensor, in addition to the analytic argmax.
    /// `None` probes every coordinate.
    pub samples: Option<usize>,
    pub seed: u64,
    /// Central-difference step; `None` uses `T::FD_STEP`.
    pub step: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { samples: Some(24), seed: 0, step: None }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(tensor name, relative error)` per checked tensor.
    pub per_tensor: Vec<(String, f64)>,
}

impl GradCheckReport {
    /// Worst relative error over all tensors.
    pub fn max_rel_error(&self) -> f64 {
        self.per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

fn coordinates(grad: &[f64], opts: &GradCheckOptions, rng: &mut Rng) -> Vec<usize> {
    let n = grad.len();
    match opts.samples {
        Some(k) if k < n => {
            let mut idx = rng.sample_indices(n, k);
            let argmax = (0..n).fold(0, |b, i| if grad[i].abs() > grad[b].abs() { i } else { b });
            if !idx.contains(&argmax) {
                idx.push(argmax);
            }
            idx
        }
        _ => (0..n).collect(),
    }
}

/// Relative error of one tensor: `‖a − n‖ / (‖a‖ + ‖n‖)`.
fn tensor_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(1e-300)
    }
}

/// Compare gradients of the scalar `f` against central differences with step
/// `opts.step` (default `T::FD_STEP`), for every input tensor and every
/// trainable parameter in `store`. `f` must be deterministic: fixed dropout
/// masks, train-mode batch norm or eval mode.
pub fn check_gradients<T, F>(
    store: &mut ParamStore<T>,
    inputs: &[Tensor<T>],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&Graph<T>, &mut ParamStore<T>, &[Var]) -> Result<Var>,
{
    let eval = |store: &mut ParamStore<T>, inputs: &[Tensor<T>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, store, &vars)?;
        Ok(g.value(out).item().f64())
    };

    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&g, store, &vars)?;
    let grads = g.backward(out)?;
    let mut param_grads: Vec<(ParamId, Vec<f64>)> = Vec::new();
    for (id, t) in grads.params() {
        let data: Vec<f64> = t.data().iter().map(|v| v.f64()).collect();
        match param_grads.iter_mut().find(|(p, _)| *p == id) {
            Some((_, acc)) => acc.iter_mut().zip(&data).for_each(|(a, d)| *a += d),
            None => param_grads.push((id, data)),
        }
    }
    let input_grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match grads.get(v) {
            Some(gr) => gr.data().iter().map(|x| x.f64()).collect(),
            None => vec![0.0; t.len()],
        })
        .collect();
    drop(grads);
    drop(g);

    let h = opts.step.unwrap_or(T::FD_STEP);
    let mut rng = Rng::new(opts.seed);
    let mut report = GradCheckReport { per_tensor: Vec::new() };

    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (i, analytic) in input_grads.iter().enumerate() {
        let coords = coordinates(analytic, &opts, &mut rng);
        let mut a = Vec::with_capacity(coords.len());
        let mut num = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = work[i].data()[c];
            let (up, down) = (T::lit(orig.f64() + h), T::lit(orig.f64() - h));
            work[i].data_mut()[c] = up;
            let plus = eval(store, &work)?;
            work[i].data_mut()[c] = down;
            let minus = eval(store, &work)?;
            work[i].data_mut()[c] = orig;
            a.push(analytic[c]);
            num.push((plus - minus) / (up.f64() - down.f64()));
        }
        report.per_tensor.push((format!("input{i}"), tensor_error(&a, &num)));
    }

    for (id, analytic) in &param_grads {
        if !store.param(*id).trainable {
            continue;
        }
        let coords = coordinates(analytic, &opts, &mut rng);
        let mut a = Vec::with_capacity(coords.len());
        let mut num = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = store.get(*id).data()[c];
            let (up, down) = (T::lit(orig.f64() + h), T::lit(orig.f64() - h));
            store.value_mut(*id).data_mut()[c] = up;
            let plus = eval(store, inputs)?;
            store.value_mut(*id).data_mut()[c] = down;
            let minus = eval(store, inputs)?;
            store.value_mut(*id).data_mut()[c] = orig;
            a.push(analytic[c]);
            num.push((plus - minus) / (up.f64() - down.f64()));
        }
        report.per_tensor.push((store.param(*id).name.clone(), tensor_error(&a, &num)));
    }
    Ok(report)
}
