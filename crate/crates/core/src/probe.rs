//! 141-way CNN heart-rate probe over frozen representations, its training
//! loop and HR decoding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{HR_CLASSES, HR_MAX, HR_MIN};
use crate::dsp::FeatureStack;
use crate::nn::{
    self, dropout, Adam, AdamConfig, BatchNorm, Conv2d, Ctx, Graph, Linear, NnError, ParamStore, Real, Tensor, Var,
};
use crate::rng::Rng;

pub const MIN_INPUT: usize = 32;
pub const POOLED: usize = 6;
pub const DROPOUT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("input {rows}×{cols} is below the {MIN_INPUT}×{MIN_INPUT} minimum")]
    TooSmall { rows: usize, cols: usize },
    #[error("expected {expected} input channels, got {got}")]
    Channels { expected: usize, got: usize },
    #[error("label {0} bpm outside [{HR_MIN}, {HR_MAX}]")]
    Label(u32),
    #[error("empty {0} set")]
    Empty(&'static str),
    #[error("{inputs} inputs but {labels} labels")]
    Length { inputs: usize, labels: usize },
    #[error("sample {index} has shape {got:?}, expected {expected:?}")]
    Ragged { index: usize, got: Vec<usize>, expected: Vec<usize> },
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, ProbeError>;

/// Five convolutions, three max-pools, adaptive 6×6 pooling and three fully
/// connected layers. Parameter shapes depend only on the channel count.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    pub in_channels: usize,
    pub convs: [Conv2d; 5],
    pub norms: [BatchNorm; 3],
    pub fc: [Linear; 3],
    pub dropout: f64,
}

pub fn check_input(rows: usize, cols: usize) -> Result<()> {
    if rows < MIN_INPUT || cols < MIN_INPUT {
        return Err(ProbeError::TooSmall { rows, cols });
    }
    Ok(())
}

/// Probe for `[in_channels × T × D]` inputs.
pub fn build_probe<T: Real>(
    in_channels: usize,
    input: (usize, usize),
    store: &mut ParamStore<T>,
    rng: &mut Rng,
) -> Result<ProbeModel> {
    check_input(input.0, input.1)?;
    if in_channels == 0 {
        return Err(ProbeError::Channels { expected: 1, got: 0 });
    }
    // Convolutions feeding batch norm carry no bias.
    let conv = |store: &mut ParamStore<T>, rng: &mut Rng, i: usize, c_in, c_out, k: usize, s: usize, bias: bool| {
        let name = format!("probe.conv{i}");
        let (k2, s2, p2) = ((k, k), (s, s), (k / 2, k / 2));
        if bias {
            Conv2d::new(store, &name, c_in, c_out, k2, s2, p2, rng)
        } else {
            Conv2d::new_without_bias(store, &name, c_in, c_out, k2, s2, p2, rng)
        }
    };
    let convs = [
        conv(store, rng, 1, in_channels, 64, 7, 2, false),
        conv(store, rng, 2, 64, 128, 5, 1, false),
        conv(store, rng, 3, 128, 192, 3, 1, true),
        conv(store, rng, 4, 192, 192, 3, 1, true),
        conv(store, rng, 5, 192, 128, 3, 1, false),
    ];
    let norms = [
        BatchNorm::new(store, "probe.bn1", 64),
        BatchNorm::new(store, "probe.bn2", 128),
        BatchNorm::new(store, "probe.bn5", 128),
    ];
    let fc = [
        Linear::new(store, "probe.fc1", 128 * POOLED * POOLED, 1024, rng),
        Linear::new(store, "probe.fc2", 1024, 512, rng),
        Linear::new(store, "probe.fc3", 512, HR_CLASSES, rng),
    ];
    Ok(ProbeModel { in_channels, convs, norms, fc, dropout: DROPOUT })
}

impl ProbeModel {
    /// `x: [N, C, T, D]` → logits `[N, 141]`.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x);
        if shape.len() != 4 {
            return Err(NnError::Shape { op: "probe input", lhs: shape, rhs: vec![0, self.in_channels, 0, 0] }.into());
        }
        if shape[1] != self.in_channels {
            return Err(ProbeError::Channels { expected: self.in_channels, got: shape[1] });
        }
        check_input(shape[2], shape[3])?;
        let g = ctx.graph;
        let pool = |x| g.max_pool2d(x, (3, 3), (2, 2));

        let mut h = self.convs[0].forward(ctx, x)?;
        h = self.norms[0].forward(ctx, h)?;
        h = pool(g.relu(h)?)?;

        h = self.convs[1].forward(ctx, h)?;
        h = self.norms[1].forward(ctx, h)?;
        h = pool(g.relu(h)?)?;

        h = self.convs[2].forward(ctx, h)?;
        h = g.relu(h)?;
        h = self.convs[3].forward(ctx, h)?;
        h = g.relu(h)?;
        h = self.convs[4].forward(ctx, h)?;
        h = self.norms[2].forward(ctx, h)?;
        h = pool(g.relu(h)?)?;

        h = g.adaptive_avg_pool2d(h, POOLED, POOLED)?;
        let n = g.shape(h)[0];
        h = g.reshape(h, &[n, 128 * POOLED * POOLED])?;
        h = self.fc[0].forward(ctx, h)?;
        h = dropout(ctx, g.relu(h)?, self.dropout)?;
        h = self.fc[1].forward(ctx, h)?;
        h = dropout(ctx, g.relu(h)?, self.dropout)?;
        Ok(self.fc[2].forward(ctx, h)?)
    }
}

/// Class index → bpm.
pub fn class_to_hr(class: usize) -> u32 {
    HR_MIN + class as u32
}

/// bpm → class index.
pub fn hr_to_class(hr: u32) -> Result<usize> {
    if !(HR_MIN..=HR_MAX).contains(&hr) {
        return Err(ProbeError::Label(hr));
    }
    Ok((hr - HR_MIN) as usize)
}

/// Argmax of one logit row plus 40; ties go to the lowest class.
pub fn predict_hr<T: Real>(logits: &[T]) -> u32 {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    class_to_hr(best)
}

/// Inputs `[C, T, D]` with bpm labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub inputs: Vec<Tensor<f32>>,
    pub labels: Vec<u32>,
}

impl LabeledSet {
    pub fn new(inputs: Vec<Tensor<f32>>, labels: Vec<u32>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(ProbeError::Length { inputs: inputs.len(), labels: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| hr_to_class(l).is_err()) {
            return Err(ProbeError::Label(bad));
        }
        if let Some(first) = inputs.first() {
            let expected = first.shape().to_vec();
            if expected.len() != 3 {
                return Err(ProbeError::Ragged { index: 0, got: expected, expected: vec![1, MIN_INPUT, MIN_INPUT] });
            }
            if let Some((index, t)) = inputs.iter().enumerate().find(|(_, t)| t.shape() != expected.as_slice()) {
                return Err(ProbeError::Ragged { index, got: t.shape().to_vec(), expected });
            }
        }
        Ok(Self { inputs, labels })
    }

    /// Baseline feature stacks as `[4, H, W]` inputs.
    pub fn from_features(features: &[FeatureStack], labels: Vec<u32>) -> Result<Self> {
        let inputs = features
            .iter()
            .map(|f| {
                let (c, h, w) = f.shape();
                let data = f.channels.iter().flat_map(|m| m.data.iter().map(|&v| v as f32)).collect();
                Tensor::from_vec(vec![c, h, w], data)
            })
            .collect::<nn::Result<Vec<_>>>()?;
        Self::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `[C, T, D]` of every sample.
    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.inputs.first().map(|t| t.shape())
    }
}

/// Which axis of `[C, T, D]` indexes the standardized features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureAxis {
    /// Per `(channel, d)`: embedding dimensions.
    Columns,
    /// Per `(channel, t)`: feature bins of a `[C, bins, frames]` stack.
    Rows,
}

/// Per-feature mean and standard deviation from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub axis: FeatureAxis,
    pub channels: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(set: &LabeledSet, axis: FeatureAxis) -> Result<Self> {
        let shape = set.sample_shape().ok_or(ProbeError::Empty("train"))?.to_vec();
        let (c, t, d) = (shape[0], shape[1], shape[2]);
        let per = if axis == FeatureAxis::Columns { d } else { t };
        let mut sum = vec![0.0f64; c * per];
        let mut sq = vec![0.0f64; c * per];
        for x in &set.inputs {
            for (i, &v) in x.data().iter().enumerate() {
                let k = Self::key(i, t, d, axis, per);
                sum[k] += v as f64;
                sq[k] += v as f64 * v as f64;
            }
        }
        let count = (set.len() * if axis == FeatureAxis::Columns { t } else { d }) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / count - m * m).max(0.0);
                if var > 1e-12 { var.sqrt() } else { 1.0 }
            })
            .collect();
        Ok(Self { axis, channels: c, mean, std })
    }

    fn key(i: usize, t: usize, d: usize, axis: FeatureAxis, per: usize) -> usize {
        let (ch, rest) = (i / (t * d), i % (t * d));
        let j = if axis == FeatureAxis::Columns { rest % d } else { rest / d };
        ch * per + j
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let (t, d) = (x.shape()[1], x.shape()[2]);
        let per = self.mean.len() / self.channels;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let k = Self::key(i, t, d, self.axis, per);
            *v = ((*v as f64 - self.mean[k]) / self.std[k]) as f32;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub axis: FeatureAxis,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch: 32, lr: 1e-4, seed: 0, axis: FeatureAxis::Columns }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: usize,
    /// Mean cross-entropy per epoch.
    pub train_loss: Vec<f64>,
    /// Validation MAE (bpm) after each epoch.
    pub val_mae: Vec<f64>,
    /// 1-based epoch whose weights were retained.
    pub best_epoch: usize,
    pub best_val_mae: f64,
    /// Where the retained weights were written, if anywhere.
    pub checkpoint: Option<String>,
}

/// A trained probe with the weights of its best validation epoch.
#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub model: ProbeModel,
    pub store: ParamStore<f32>,
    pub standardizer: Standardizer,
    pub report: TrainReport,
}

fn batch_tensor(set: &LabeledSet, idx: &[usize], std: &Standardizer) -> Result<Tensor<f32>> {
    let items: Vec<Tensor<f32>> = idx.iter().map(|&i| std.apply(&set.inputs[i])).collect();
    Ok(Tensor::stack(&items)?)
}

/// Predicted bpm for every sample, in eval mode.
pub fn predict(
    model: &ProbeModel,
    store: &mut ParamStore<f32>,
    standardizer: &Standardizer,
    set: &LabeledSet,
    batch: usize,
) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(set.len());
    let order: Vec<usize> = (0..set.len()).collect();
    let mut rng = Rng::new(0);
    for idx in order.chunks(batch.max(1)) {
        let g = Graph::new();
        let mut ctx = Ctx::frozen(&g, store, &mut rng);
        let x = g.constant(batch_tensor(set, idx, standardizer)?);
        let logits = model.forward(&mut ctx, x)?;
        let value = g.value(logits);
        out.extend(value.data().chunks(HR_CLASSES).map(predict_hr));
    }
    Ok(out)
}

fn mean_abs_error(pred: &[u32], target: &[u32]) -> f64 {
    pred.iter().zip(target).map(|(&p, &t)| (p as f64 - t as f64).abs()).sum::<f64>() / pred.len() as f64
}

/// Cross-entropy training with Adam; keeps the epoch with the lowest
/// validation MAE (earliest on ties).
pub fn train_probe(train: &LabeledSet, val: &LabeledSet, cfg: &ProbeTrainConfig) -> Result<TrainedProbe> {
    if train.is_empty() {
        return Err(ProbeError::Empty("train"));
    }
    if val.is_empty() {
        return Err(ProbeError::Empty("validation"));
    }
    let shape = train.sample_shape().expect("non-empty").to_vec();
    if val.sample_shape() != Some(shape.as_slice()) {
        return Err(ProbeError::Ragged { index: 0, got: val.sample_shape().unwrap_or_default().to_vec(), expected: shape });
    }
    let mut rng = Rng::new(cfg.seed);
    let mut store = ParamStore::new();
    let model = build_probe(shape[0], (shape[1], shape[2]), &mut store, &mut rng)?;
    let standardizer = Standardizer::fit(train, cfg.axis)?;
    let opt = Adam::new(AdamConfig::adam(cfg.lr));
    let classes: Vec<usize> = train.labels.iter().map(|&l| hr_to_class(l)).collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        seed: cfg.seed,
        epochs: cfg.epochs,
        train_loss: Vec::with_capacity(cfg.epochs),
        val_mae: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_mae: f64::INFINITY,
        checkpoint: None,
    };
    let mut best = store.clone();
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch.max(1)) {
            // Batch norm needs two samples per batch.
            if idx.len() < 2 {
                continue;
            }
            let x = batch_tensor(train, idx, &standardizer)?;
            let targets: Vec<usize> = idx.iter().map(|&i| classes[i]).collect();
            let g = Graph::new();
            let loss = {
                let mut ctx = Ctx::new(&g, &mut store, true, &mut rng);
                let x = g.constant(x);
                let logits = model.forward(&mut ctx, x)?;
                g.cross_entropy(logits, &targets)?
            };
            loss_sum += g.value(loss).item() as f64 * idx.len() as f64;
            seen += idx.len();
            let grads = g.backward(loss)?;
            drop(g);
            opt.step(&mut store, &grads)?;
        }
        report.train_loss.push(if seen > 0 { loss_sum / seen as f64 } else { f64::NAN });
        let pred = predict(&model, &mut store, &standardizer, val, cfg.batch)?;
        let mae = mean_abs_error(&pred, &val.labels);
        report.val_mae.push(mae);
        if mae < report.best_val_mae {
            report.best_val_mae = mae;
            report.best_epoch = epoch;
            best = store.clone();
        }
    }
    Ok(TrainedProbe { model, store: best, standardizer, report })
}

/// [`train_probe`] on 4-channel baseline feature stacks, standardized per
/// feature row.
pub fn train_baseline(
    train: &[FeatureStack],
    train_labels: Vec<u32>,
    val: &[FeatureStack],
    val_labels: Vec<u32>,
    cfg: &ProbeTrainConfig,
) -> Result<TrainedProbe> {
    let train = LabeledSet::from_features(train, train_labels)?;
    let val = LabeledSet::from_features(val, val_labels)?;
    train_probe(&train, &val, &ProbeTrainConfig { axis: FeatureAxis::Rows, ..cfg.clone() })
}

impl TrainedProbe {
    pub fn predict(&mut self, set: &LabeledSet) -> Result<Vec<u32>> {
        predict(&self.model, &mut self.store, &self.standardizer, set, 32)
    }

    /// Test MAE in bpm.
    pub fn evaluate(&mut self, set: &LabeledSet) -> Result<f64> {
        if set.is_empty() {
            return Err(ProbeError::Empty("test"));
        }
        let pred = self.predict(set)?;
        Ok(mean_abs_error(&pred, &set.labels))
    }

    pub fn checkpoint_metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "probe",
            "in_channels": self.model.in_channels,
            "standardizer": self.standardizer,
            "report": self.report,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::hr_embedding;

    fn logits_for(batch: usize, rows: usize, cols: usize) -> Vec<usize> {
        let mut rng = Rng::new(0);
        let mut store = ParamStore::<f32>::new();
        let model = build_probe(1, (rows, cols), &mut store, &mut rng).unwrap();
        let g = Graph::new();
        let mut ctx = Ctx::frozen(&g, &mut store, &mut rng);
        let x = g.constant(Tensor::from_fn(&[batch, 1, rows, cols], |i| ((i % 17) as f32 - 8.0) / 8.0));
        let y = model.forward(&mut ctx, x).unwrap();
        g.shape(y)
    }

    #[test]
    fn logits_for_table_shapes() {
        assert_eq!(logits_for(2, 64, 768), vec![2, HR_CLASSES]);
        assert_eq!(logits_for(2, 32, 32), vec![2, HR_CLASSES]);
        assert_eq!(logits_for(1, 40, 90), vec![1, HR_CLASSES]);
    }

    #[test]
    fn rejects_small_inputs() {
        let mut store = ParamStore::<f32>::new();
        let err = build_probe(1, (16, 16), &mut store, &mut Rng::new(0)).unwrap_err();
        assert!(matches!(err, ProbeError::TooSmall { rows: 16, cols: 16 }));
        assert!(build_probe(1, (31, 64), &mut store, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn forward_checks_channels_and_size() {
        let mut rng = Rng::new(0);
        let mut store = ParamStore::<f32>::new();
        let model = build_probe(4, (32, 32), &mut store, &mut rng).unwrap();
        let g = Graph::new();
        let mut ctx = Ctx::frozen(&g, &mut store, &mut rng);
        let x = g.constant(Tensor::zeros(&[1, 1, 32, 32]));
        assert!(matches!(model.forward(&mut ctx, x), Err(ProbeError::Channels { expected: 4, got: 1 })));
        let x = g.constant(Tensor::zeros(&[1, 4, 20, 32]));
        assert!(matches!(model.forward(&mut ctx, x), Err(ProbeError::TooSmall { .. })));
    }

    #[test]
    fn parameter_shapes_do_not_depend_on_input_size() {
        let mut a = ParamStore::<f32>::new();
        let mut b = ParamStore::<f32>::new();
        build_probe(1, (248, 768), &mut a, &mut Rng::new(1)).unwrap();
        build_probe(1, (32, 32), &mut b, &mut Rng::new(1)).unwrap();
        assert!(a.same_values(&b));
    }

    #[test]
    fn hr_decoding_anchors() {
        let mut logits = vec![0.0f32; HR_CLASSES];
        assert_eq!(predict_hr(&logits), 40);
        logits[140] = 1.0;
        assert_eq!(predict_hr(&logits), 180);
        logits[80] = 2.0;
        assert_eq!(predict_hr(&logits), 120);
        logits[30] = 2.0;
        assert_eq!(predict_hr(&logits), 70);
        assert_eq!(hr_to_class(40).unwrap(), 0);
        assert!(hr_to_class(39).is_err());
        assert!(hr_to_class(181).is_err());
    }

    #[test]
    fn labeled_set_validation() {
        let x = || Tensor::zeros(&[1, 32, 32]);
        assert!(matches!(LabeledSet::new(vec![x()], vec![200]), Err(ProbeError::Label(200))));
        assert!(matches!(LabeledSet::new(vec![x()], vec![]), Err(ProbeError::Length { .. })));
        let ragged = LabeledSet::new(vec![x(), Tensor::zeros(&[1, 32, 40])], vec![60, 60]);
        assert!(matches!(ragged, Err(ProbeError::Ragged { index: 1, .. })));
    }

    #[test]
    fn standardizer_columns_and_rows() {
        let a = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 10.0, 3.0, 30.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 2, 2], vec![1.0, 10.0, 3.0, 30.0]).unwrap();
        let set = LabeledSet { inputs: vec![a.clone(), b], labels: vec![60, 60] };
        let cols = Standardizer::fit(&set, FeatureAxis::Columns).unwrap();
        assert_eq!(cols.mean, vec![2.0, 20.0]);
        assert_eq!(cols.std, vec![1.0, 10.0]);
        assert_eq!(cols.apply(&a).data(), &[-1.0, -1.0, 1.0, 1.0]);
        let rows = Standardizer::fit(&set, FeatureAxis::Rows).unwrap();
        assert_eq!(rows.mean, vec![5.5, 16.5]);
        let constant = LabeledSet { inputs: vec![Tensor::full(&[1, 2, 2], 3.0)], labels: vec![60] };
        let s = Standardizer::fit(&constant, FeatureAxis::Columns).unwrap();
        assert_eq!(s.std, vec![1.0, 1.0]);
    }

    fn synthetic(count: usize, seed: u64, constant: Option<u32>) -> LabeledSet {
        let mut rng = Rng::new(seed);
        let labels: Vec<u32> = (0..count).map(|_| constant.unwrap_or_else(|| 40 + rng.below(141) as u32)).collect();
        let inputs = labels.iter().map(|&hr| hr_embedding(hr, 32, 32, 0.5, 0.0, &mut rng)).collect();
        LabeledSet::new(inputs, labels).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let (train, val) = (synthetic(12, 1, None), synthetic(4, 2, None));
        let cfg = ProbeTrainConfig { epochs: 2, batch: 4, ..Default::default() };
        let a = train_probe(&train, &val, &cfg).unwrap();
        let b = train_probe(&train, &val, &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert!(a.store.same_values(&b.store));
        assert_eq!(a.report.train_loss.len(), 2);
        assert_eq!(a.report.val_mae.len(), 2);
    }

    #[test]
    fn constant_labels_converge() {
        let (train, val) = (synthetic(16, 3, Some(120)), synthetic(8, 4, Some(120)));
        let cfg = ProbeTrainConfig { epochs: 8, batch: 8, ..Default::default() };
        let mut trained = train_probe(&train, &val, &cfg).unwrap();
        assert_eq!(trained.report.best_val_mae, 0.0);
        assert_eq!(trained.evaluate(&val).unwrap(), 0.0);
    }

    #[test]
    fn empty_sets_rejected() {
        let val = synthetic(2, 0, None);
        let empty = LabeledSet::default();
        assert!(matches!(train_probe(&empty, &val, &ProbeTrainConfig::default()), Err(ProbeError::Empty("train"))));
    }
}
