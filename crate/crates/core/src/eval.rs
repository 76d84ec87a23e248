//! Mean absolute error, the split × layer MAE matrix, its summary statistics,
//! ensemble averaging and CSV report emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{HR_MAX, HR_MIN};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("ensemble needs at least 2 prediction vectors, got {0}")]
    TooFewMembers(usize),
    #[error("matrix {model} is missing cells: {cells}")]
    Incomplete { model: String, cells: String },
    #[error("invalid MAE {value} at split {split}, layer {layer}")]
    BadValue { split: String, layer: u32, value: f64 },
    #[error("unknown {kind} {id}")]
    Unknown { kind: &'static str, id: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `(1/M) Σ |pred − target|`.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(EvalError::Length(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// [`mae`] on integer bpm.
pub fn mae_bpm(pred: &[u32], target: &[u32]) -> Result<f64> {
    let f = |v: &[u32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    mae(&f(pred), &f(target))
}

/// Element-wise mean of integer predictions, rounded half up and clamped to
/// the label range.
pub fn ensemble(predictions: &[Vec<u32>]) -> Result<Vec<u32>> {
    if predictions.len() < 2 {
        return Err(EvalError::TooFewMembers(predictions.len()));
    }
    let n = predictions[0].len();
    if let Some(p) = predictions.iter().find(|p| p.len() != n) {
        return Err(EvalError::Length(n, p.len()));
    }
    let k = predictions.len() as u64;
    Ok((0..n)
        .map(|i| {
            let sum: u64 = predictions.iter().map(|p| p[i] as u64).sum();
            let rounded = (2 * sum + k) / (2 * k);
            (rounded as u32).clamp(HR_MIN, HR_MAX)
        })
        .collect())
}

fn pop_mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let (mean, _) = pop_mean_std(values);
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// MAE in bpm for every (split, layer) probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeMatrix {
    pub model_name: String,
    pub split_ids: Vec<String>,
    pub layer_ids: Vec<u32>,
    /// `[split][layer]`; `None` until filled.
    pub values: Vec<Vec<Option<f64>>>,
}

impl MaeMatrix {
    pub fn new(model_name: &str, split_ids: Vec<String>, layer_ids: Vec<u32>) -> Self {
        let values = vec![vec![None; layer_ids.len()]; split_ids.len()];
        Self { model_name: model_name.to_string(), split_ids, layer_ids, values }
    }

    /// Complete matrix from `[split][layer]` rows.
    pub fn from_rows(model_name: &str, split_ids: Vec<String>, layer_ids: Vec<u32>, rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::new(model_name, split_ids, layer_ids);
        if rows.len() != m.split_ids.len() {
            return Err(EvalError::Length(rows.len(), m.split_ids.len()));
        }
        for (s, row) in rows.iter().enumerate() {
            if row.len() != m.layer_ids.len() {
                return Err(EvalError::Length(row.len(), m.layer_ids.len()));
            }
            for (l, &v) in row.iter().enumerate() {
                m.set_at(s, l, v)?;
            }
        }
        Ok(m)
    }

    fn set_at(&mut self, s: usize, l: usize, value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(EvalError::BadValue { split: self.split_ids[s].clone(), layer: self.layer_ids[l], value });
        }
        self.values[s][l] = Some(value);
        Ok(())
    }

    pub fn set(&mut self, split: &str, layer: u32, value: f64) -> Result<()> {
        let s = self
            .split_ids
            .iter()
            .position(|x| x == split)
            .ok_or_else(|| EvalError::Unknown { kind: "split", id: split.into() })?;
        let l = self
            .layer_ids
            .iter()
            .position(|&x| x == layer)
            .ok_or_else(|| EvalError::Unknown { kind: "layer", id: layer.to_string() })?;
        self.set_at(s, l, value)
    }

    pub fn get(&self, split: usize, layer: usize) -> Option<f64> {
        self.values[split][layer]
    }

    /// `(split, layer)` ids of empty cells.
    pub fn missing(&self) -> Vec<(String, u32)> {
        let mut out = Vec::new();
        for (s, row) in self.values.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                if v.is_none() {
                    out.push((self.split_ids[s].clone(), self.layer_ids[l]));
                }
            }
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        !self.split_ids.is_empty() && !self.layer_ids.is_empty() && self.missing().is_empty()
    }

    fn check_complete(&self) -> Result<()> {
        if self.split_ids.is_empty() || self.layer_ids.is_empty() {
            return Err(EvalError::Empty);
        }
        let missing = self.missing();
        if missing.is_empty() {
            return Ok(());
        }
        let cells = missing.iter().map(|(s, l)| format!("({s}, layer {l})")).collect::<Vec<_>>().join(", ");
        Err(EvalError::Incomplete { model: self.model_name.clone(), cells })
    }

    /// Values of one layer across splits.
    pub fn column(&self, layer: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[layer].unwrap_or(f64::NAN)).collect()
    }

    /// `(layer id, mean, population std)` per layer.
    pub fn layer_curves(&self) -> Result<Vec<(u32, f64, f64)>> {
        self.check_complete()?;
        Ok((0..self.layer_ids.len())
            .map(|l| {
                let (m, s) = pop_mean_std(&self.column(l));
                (self.layer_ids[l], m, s)
            })
            .collect())
    }
}

/// Per-model aggregates over a complete matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    /// Smallest per-layer mean over splits.
    pub min_mean_mae: f64,
    /// Population std across splits at the best-mean layer.
    pub std_at_best_layer: f64,
    /// Smallest single entry.
    pub min_individual_mae: f64,
    /// Mean over layers of per-layer population stds.
    pub mean_of_stds: f64,
    /// Smallest per-layer population std.
    pub min_std: f64,
    /// Id of the best-mean layer, lowest on ties.
    pub best_layer: u32,
    /// Sample (÷ N−1) std at the best-mean layer.
    pub std_at_best_layer_sample: f64,
}

impl SummaryStats {
    pub fn as_tuple(&self) -> (f64, f64, f64, f64, f64) {
        (self.min_mean_mae, self.std_at_best_layer, self.min_individual_mae, self.mean_of_stds, self.min_std)
    }
}

pub fn summarize(m: &MaeMatrix) -> Result<SummaryStats> {
    let curves = m.layer_curves()?;
    let mut best = 0;
    for (i, c) in curves.iter().enumerate() {
        if c.1 < curves[best].1 {
            best = i;
        }
    }
    let min_individual_mae = m.values.iter().flatten().flatten().copied().fold(f64::INFINITY, f64::min);
    let stds: Vec<f64> = curves.iter().map(|c| c.2).collect();
    Ok(SummaryStats {
        min_mean_mae: curves[best].1,
        std_at_best_layer: curves[best].2,
        min_individual_mae,
        mean_of_stds: stds.iter().sum::<f64>() / stds.len() as f64,
        min_std: stds.iter().copied().fold(f64::INFINITY, f64::min),
        best_layer: curves[best].0,
        std_at_best_layer_sample: sample_std(&m.column(best)),
    })
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn matrix_csv(m: &MaeMatrix) -> Result<String> {
    m.check_complete()?;
    let mut s = String::from("split");
    for l in &m.layer_ids {
        let _ = write!(s, ",layer_{l}");
    }
    s.push('\n');
    for (split, row) in m.split_ids.iter().zip(&m.values) {
        s.push_str(split);
        for v in row.iter().flatten() {
            s.push(',');
            s.push_str(&f6(*v));
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn curves_csv(m: &MaeMatrix) -> Result<String> {
    let mut s = String::from("layer,mean,std\n");
    for (l, mean, std) in m.layer_curves()? {
        let _ = writeln!(s, "{l},{},{}", f6(mean), f6(std));
    }
    Ok(s)
}

pub const SUMMARY_HEADER: &str =
    "model,best_layer,min_mean_mae,std_at_best_layer,min_individual_mae,mean_of_stds,min_std,std_at_best_layer_sample";

pub fn summary_csv(matrices: &[MaeMatrix]) -> Result<String> {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for m in matrices {
        let st = summarize(m)?;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.model_name,
            st.best_layer,
            f6(st.min_mean_mae),
            f6(st.std_at_best_layer),
            f6(st.min_individual_mae),
            f6(st.mean_of_stds),
            f6(st.min_std),
            f6(st.std_at_best_layer_sample)
        );
    }
    Ok(s)
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|source| EvalError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// Write `mae_matrix_<model>.csv` and `layer_curves_<model>.csv` per matrix
/// plus one `summary.csv`; returns the paths written.
pub fn emit_report(matrices: &[MaeMatrix], out_dir: &Path) -> Result<Vec<PathBuf>> {
    // Render everything first so a bad matrix leaves no partial report.
    let summary = summary_csv(matrices)?;
    let per_model = matrices
        .iter()
        .map(|m| Ok((m.model_name.as_str(), matrix_csv(m)?, curves_csv(m)?)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out_dir).map_err(|source| EvalError::Io { path: out_dir.into(), source })?;
    let mut paths = Vec::new();
    for (name, matrix, curves) in per_model {
        paths.push(write(out_dir.join(format!("mae_matrix_{name}.csv")), &matrix)?);
        paths.push(write(out_dir.join(format!("layer_curves_{name}.csv")), &curves)?);
    }
    paths.push(write(out_dir.join("summary.csv"), &summary)?);
    Ok(paths)
}
