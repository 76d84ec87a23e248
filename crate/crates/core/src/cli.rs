//! Pipeline commands: corpus preparation, splitting, encoder pretraining,
//! layer export, probing, the baseline and the final report.
//!
//! Every command reads a [`RunConfig`] and writes only deterministic bytes,
//! so a rerun with the same inputs reproduces its outputs exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, load_annotation, load_recording, manifest_to_csv, read_manifest, subject_counts, window_snippets_with_stats,
    SnippetRecord, SplitSet, SplitSpec,
};
use crate::dsp::{self, LogMelConfig};
use crate::embio::{self, ContainerMeta};
use crate::encoder::{encoder_input, EncoderConfig, EncoderModel, PretrainConfig, PretrainReport};
use crate::eval::{self, MaeMatrix};
use crate::nn::{load_checkpoint, save_checkpoint, Tensor};
use crate::probe::{self, FeatureAxis, LabeledSet, ProbeTrainConfig, TrainReport};
use crate::wav;

pub const JOBS_ENV: &str = "PCGPROBE_JOBS";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const RECORDINGS_FILE: &str = "recordings.csv";
pub const SNIPPET_DIR: &str = "snippets";
pub const ENCODER_CHECKPOINT: &str = "encoder.ckpt";
pub const BASELINE_MODEL: &str = "baseline";

/// Settings shared by all commands. Loaded from `key=value` lines, then
/// overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub snippets: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub model: String,
    pub preset: String,
    /// `None` means every layer found.
    pub layers: Option<Vec<u32>>,
    pub seeds: Vec<u64>,
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            out: None,
            manifest: None,
            snippets: None,
            splits: None,
            embeddings: None,
            checkpoint: None,
            results: None,
            model: "tiny".into(),
            preset: "tiny".into(),
            layers: None,
            seeds: (0..=5).collect(),
            seed: 0,
            epochs: 50,
            batch: 32,
            lr: 1e-4,
            pretrain_epochs: 20,
            pretrain_batch: 8,
            pretrain_lr: 1e-3,
            jobs: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "corpus",
    "out",
    "manifest",
    "snippets",
    "splits",
    "embeddings",
    "checkpoint",
    "results",
    "model",
    "preset",
    "layers",
    "seeds",
    "seed",
    "epochs",
    "batch",
    "lr",
    "pretrain_epochs",
    "pretrain_batch",
    "pretrain_lr",
    "jobs",
];

/// `a..b` (inclusive) or a comma list.
pub fn parse_list<T: std::str::FromStr + Copy + Into<u64> + TryFrom<u64>>(s: &str) -> Result<Vec<T>> {
    let num = |x: &str| x.trim().parse::<T>().map_err(|_| anyhow!("bad number {x:?} in {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?.into(), num(b.trim_start_matches('='))?.into());
        ensure!(a <= b, "empty range {s:?}");
        return (a..=b).map(|v| T::try_from(v).map_err(|_| anyhow!("{v} out of range"))).collect();
    }
    s.split(',').filter(|x| !x.trim().is_empty()).map(num).collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let path = || Some(PathBuf::from(v));
        let num = |what: &str| anyhow!("{what} expects a number, got {v:?}");
        match key.trim() {
            "corpus" => self.corpus = path(),
            "out" => self.out = path(),
            "manifest" => self.manifest = path(),
            "snippets" => self.snippets = path(),
            "splits" => self.splits = path(),
            "embeddings" => self.embeddings = path(),
            "checkpoint" => self.checkpoint = path(),
            "results" => self.results = path(),
            "model" => self.model = v.to_string(),
            "preset" => self.preset = v.to_string(),
            "layers" => self.layers = if v == "all" { None } else { Some(parse_list::<u32>(v)?) },
            "seeds" => self.seeds = parse_list::<u64>(v)?,
            "seed" => self.seed = v.parse().map_err(|_| num("seed"))?,
            "epochs" => self.epochs = v.parse().map_err(|_| num("epochs"))?,
            "batch" => self.batch = v.parse().map_err(|_| num("batch"))?,
            "lr" => self.lr = v.parse().map_err(|_| num("lr"))?,
            "pretrain_epochs" => self.pretrain_epochs = v.parse().map_err(|_| num("pretrain_epochs"))?,
            "pretrain_batch" => self.pretrain_batch = v.parse().map_err(|_| num("pretrain_batch"))?,
            "pretrain_lr" => self.pretrain_lr = v.parse().map_err(|_| num("pretrain_lr"))?,
            "jobs" => self.jobs = Some(v.parse().map_err(|_| num("jobs"))?),
            other => bail!("unknown config key {other:?} (known: {})", CONFIG_KEYS.join(", ")),
        }
        Ok(())
    }

    /// Parse `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key=value", n + 1))?;
            cfg.set(k, v).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Worker count: explicit setting, then `PCGPROBE_JOBS`, then the CPU count.
    pub fn resolved_jobs(&self) -> usize {
        self.jobs
            .or_else(|| std::env::var(JOBS_ENV).ok().and_then(|v| v.parse().ok()))
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    fn path(&self, value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        value.clone().ok_or_else(|| anyhow!("missing required setting {key:?}"))
    }

    fn input_file(&self, value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = self.path(value, key)?;
        ensure!(p.is_file(), "missing upstream artifact {} ({key})", p.display());
        Ok(p)
    }

    fn input_dir(&self, value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = self.path(value, key)?;
        ensure!(p.is_dir(), "missing upstream artifact {} ({key})", p.display());
        Ok(p)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let p = self.path(&self.out, "out")?;
        fs::create_dir_all(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(p)
    }

    fn encoder_config(&self) -> Result<EncoderConfig> {
        EncoderConfig::preset(&self.preset).ok_or_else(|| anyhow!("unknown preset {:?} (tiny, vitb)", self.preset))
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

/// Per-recording windowing outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingRow {
    pub recording_id: String,
    pub duration_s: f64,
    pub windows: usize,
    pub snippets: usize,
    pub too_few_onsets: usize,
    pub out_of_range: usize,
    pub beyond_audio: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub snippets: usize,
    pub recordings: Vec<RecordingRow>,
    pub manifest: PathBuf,
}

pub fn recordings_csv(rows: &[RecordingRow]) -> String {
    let mut s = String::from("recording_id,duration_s,windows,snippets,too_few_onsets,out_of_range,beyond_audio\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{},{},{},{},{}\n",
            r.recording_id, r.duration_s, r.windows, r.snippets, r.too_few_onsets, r.out_of_range, r.beyond_audio
        ));
    }
    s
}

/// Window every paired recording into labeled 5 s snippets; writes the
/// manifest, one WAV per snippet and a per-recording count table.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    let corpus_dir = cfg.input_dir(&cfg.corpus, "corpus")?;
    let listing = corpus::scan_corpus(&corpus_dir)?;
    if !listing.unpaired.is_empty() {
        let names: Vec<String> = listing.unpaired.iter().map(|p| p.display().to_string()).collect();
        bail!("{} unpaired corpus files:\n  {}", names.len(), names.join("\n  "));
    }
    let out = cfg.out_dir()?;
    let snippet_dir = out.join(SNIPPET_DIR);
    fs::create_dir_all(&snippet_dir)?;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (wav_path, tsv_path) in &listing.pairs {
        let recording = load_recording(wav_path).with_context(|| format!("loading {}", wav_path.display()))?;
        let annotation = load_annotation(tsv_path)?;
        let (snippets, stats) = window_snippets_with_stats(&recording, &annotation);
        for s in &snippets {
            wav::write(&snippet_dir.join(format!("{}.wav", s.snippet_id)), &s.audio)?;
            records.push(s.record());
        }
        rows.push(RecordingRow {
            recording_id: recording.recording_id.clone(),
            duration_s: recording.audio.duration(),
            windows: stats.windows,
            snippets: stats.kept,
            too_few_onsets: stats.too_few_onsets,
            out_of_range: stats.out_of_range,
            beyond_audio: stats.beyond_audio,
        });
    }
    if listing.pairs.is_empty() {
        eprintln!("warning: no WAV/TSV pairs in {}", corpus_dir.display());
    }
    let manifest = out.join(MANIFEST_FILE);
    write_file(&manifest, manifest_to_csv(&records))?;
    write_file(&out.join(RECORDINGS_FILE), recordings_csv(&rows))?;
    Ok(PrepareSummary { snippets: records.len(), recordings: rows, manifest })
}

pub fn split_file_name(seed: u64) -> String {
    format!("split_{seed}.csv")
}

pub fn split_id(seed: u64) -> String {
    format!("split{seed}")
}

/// Hook applied to each generated split before verification.
pub type SplitHook<'a> = &'a dyn Fn(&mut SplitSpec);

/// One subject-disjoint split per seed. All splits are verified before any
/// file is written.
pub fn cmd_split(cfg: &RunConfig, hook: Option<SplitHook<'_>>) -> Result<Vec<PathBuf>> {
    let manifest_path = cfg.input_file(&cfg.manifest, "manifest")?;
    let manifest = read_manifest(&manifest_path)?;
    ensure!(!cfg.seeds.is_empty(), "no split seeds given");
    let counts = subject_counts(&manifest);
    let mut specs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut spec = corpus::make_splits(&counts, seed)?;
        if let Some(hook) = hook {
            hook(&mut spec);
        }
        spec.verify(&manifest).with_context(|| format!("split seed {seed}"))?;
        specs.push(spec);
    }
    let out = cfg.out_dir()?;
    specs
        .iter()
        .map(|spec| {
            let path = out.join(split_file_name(spec.seed));
            write_file(&path, spec.to_csv())?;
            Ok(path)
        })
        .collect()
}

fn load_split(dir: &Path, seed: u64) -> Result<SplitSpec> {
    let path = dir.join(split_file_name(seed));
    ensure!(path.is_file(), "missing upstream artifact {}", path.display());
    let text = fs::read_to_string(&path)?;
    Ok(SplitSpec::from_csv(&text, seed, &path.display().to_string())?)
}

fn load_snippet_audio(dir: &Path, records: &[SnippetRecord]) -> Result<Vec<dsp::Pcm>> {
    records
        .iter()
        .map(|r| {
            let path = dir.join(format!("{}.wav", r.snippet_id));
            ensure!(path.is_file(), "missing upstream artifact {}", path.display());
            Ok(wav::read(&path)?)
        })
        .collect()
}

fn encoder_spectrograms(audio: &[dsp::Pcm]) -> Result<Vec<dsp::Spectrogram>> {
    audio.iter().map(|a| Ok(encoder_input(a, &LogMelConfig::encoder())?)).collect()
}

/// Masked-autoencoder pretraining of the encoder preset on every manifest
/// snippet; writes `encoder.ckpt` and `pretrain_report.json`.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainReport> {
    let manifest = read_manifest(&cfg.input_file(&cfg.manifest, "manifest")?)?;
    let snippets = cfg.input_dir(&cfg.snippets, "snippets")?;
    let enc_cfg = cfg.encoder_config()?;
    ensure!(!manifest.is_empty(), "manifest has no snippets");
    let out = cfg.out_dir()?;
    let specs = encoder_spectrograms(&load_snippet_audio(&snippets, &manifest)?)?;
    let mut model = EncoderModel::new(&enc_cfg, cfg.seed)?;
    let pcfg = PretrainConfig {
        epochs: cfg.pretrain_epochs,
        batch: cfg.pretrain_batch,
        peak_lr: cfg.pretrain_lr,
        seed: cfg.seed,
        ..PretrainConfig::default()
    };
    let report = model.pretrain(&specs, &pcfg)?;
    let steps = specs.len().div_ceil(pcfg.batch.max(1)) * pcfg.epochs;
    save_checkpoint(&out.join(ENCODER_CHECKPOINT), &model.store, model.checkpoint_metadata(steps))?;
    write_json(&out.join("pretrain_report.json"), &report)?;
    Ok(report)
}

/// Encode every manifest snippet and write one container per encoder layer.
/// Without a checkpoint the encoder keeps its seeded initialization.
pub fn cmd_embed(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let manifest = read_manifest(&cfg.input_file(&cfg.manifest, "manifest")?)?;
    let snippets = cfg.input_dir(&cfg.snippets, "snippets")?;
    let enc_cfg = cfg.encoder_config()?;
    let checkpoint = match &cfg.checkpoint {
        Some(_) => Some(load_checkpoint(&cfg.input_file(&cfg.checkpoint, "checkpoint")?)?),
        None => None,
    };
    ensure!(!manifest.is_empty(), "manifest has no snippets");
    let out = cfg.out_dir()?;
    let mut model = EncoderModel::new(&enc_cfg, cfg.seed)?;
    if let Some(ckpt) = checkpoint {
        ckpt.apply(&mut model.store).context("checkpoint does not match the preset")?;
    }
    let mut layers: Vec<Vec<Vec<f32>>> = vec![Vec::with_capacity(manifest.len()); enc_cfg.depth];
    let mut shape = [0usize; 2];
    for chunk in manifest.chunks(8) {
        let specs = encoder_spectrograms(&load_snippet_audio(&snippets, chunk)?)?;
        for o in model.encode_layers(&specs)? {
            for (l, seq) in o.layers.into_iter().enumerate() {
                shape = [seq.len(), seq.dim()];
                layers[l].push(seq.tokens.into_data());
            }
        }
    }
    let mut paths = Vec::with_capacity(layers.len());
    for (l, values) in layers.iter().enumerate() {
        let layer = l as u32 + 1;
        let meta = ContainerMeta { model_name: cfg.model.clone(), layer, shape };
        let records: Vec<(&str, &[f32])> =
            manifest.iter().zip(values).map(|(r, v)| (r.snippet_id.as_str(), v.as_slice())).collect();
        let path = out.join(embio::container_file_name(&cfg.model, layer));
        embio::write_container(&path, &meta, &records)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Outcome of one (layer, split) probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeJobResult {
    pub model: String,
    pub layer: u32,
    pub split: String,
    pub seed: u64,
    pub test_mae: f64,
    pub report: TrainReport,
    /// `(snippet_id, predicted bpm)` over the test set.
    pub test_predictions: Vec<(String, u32)>,
}

pub fn job_stem(model: &str, layer: u32, split_seed: u64) -> String {
    format!("{model}_layer{layer:02}_split{split_seed}")
}

/// Run `jobs` closures on `workers` threads; results come back in input order.
pub fn run_pool<T: Send, F: Fn(usize) -> Result<T> + Sync>(jobs: usize, workers: usize, f: F) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<BTreeMap<usize, Result<T>>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs {
                    break;
                }
                let r = f(i);
                results.lock().expect("result store poisoned").insert(i, r);
            });
        }
    });
    results.into_inner().expect("result store poisoned").into_values().collect()
}

struct SplitSets {
    seed: u64,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn split_indices(manifest: &[SnippetRecord], spec: &SplitSpec) -> Result<SplitSets> {
    let mut sets = SplitSets { seed: spec.seed, train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (i, r) in manifest.iter().enumerate() {
        match spec.set_of(&r.subject_id) {
            Some(SplitSet::Train) => sets.train.push(i),
            Some(SplitSet::Val) => sets.val.push(i),
            Some(SplitSet::Test) => sets.test.push(i),
            None => bail!("split {} does not assign subject {}", spec.seed, r.subject_id),
        }
    }
    Ok(sets)
}

fn subset(inputs: &[Tensor<f32>], labels: &[u32], idx: &[usize]) -> Result<LabeledSet> {
    Ok(LabeledSet::new(idx.iter().map(|&i| inputs[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())?)
}

#[allow(clippy::too_many_arguments)]
fn probe_job(
    cfg: &RunConfig,
    model: &str,
    layer: u32,
    split: &SplitSets,
    manifest: &[SnippetRecord],
    inputs: &[Tensor<f32>],
    axis: FeatureAxis,
    out: &Path,
) -> Result<ProbeJobResult> {
    let labels: Vec<u32> = manifest.iter().map(|r| r.hr_bpm).collect();
    let train = subset(inputs, &labels, &split.train)?;
    let val = subset(inputs, &labels, &split.val)?;
    let test = subset(inputs, &labels, &split.test)?;
    let seed = cfg.seed.wrapping_add(1000 * layer as u64).wrapping_add(split.seed);
    let pcfg = ProbeTrainConfig { epochs: cfg.epochs, batch: cfg.batch, lr: cfg.lr, seed, axis };
    let stem = job_stem(model, layer, split.seed);
    let mut trained = probe::train_probe(&train, &val, &pcfg).with_context(|| format!("probe {stem}"))?;
    let ckpt_name = format!("{stem}.ckpt");
    trained.report.checkpoint = Some(format!("checkpoints/{ckpt_name}"));
    save_checkpoint(&out.join("checkpoints").join(&ckpt_name), &trained.store, trained.checkpoint_metadata())?;
    let pred = trained.predict(&test)?;
    let result = ProbeJobResult {
        model: model.to_string(),
        layer,
        split: split_id(split.seed),
        seed,
        test_mae: eval::mae_bpm(&pred, &test.labels)?,
        report: trained.report,
        test_predictions: split.test.iter().map(|&i| manifest[i].snippet_id.clone()).zip(pred).collect(),
    };
    write_json(&out.join("reports").join(format!("{stem}.json")), &result)?;
    Ok(result)
}

fn available_layers(dir: &Path, model: &str) -> Result<Vec<u32>> {
    let prefix = format!("{model}_layer");
    let mut layers = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(n) = name.strip_prefix(&prefix).and_then(|s| s.strip_suffix(".pemb")) {
            if let Ok(l) = n.parse() {
                layers.push(l);
            }
        }
    }
    layers.sort_unstable();
    Ok(layers)
}

fn load_layer_inputs(dir: &Path, model: &str, layer: u32, manifest: &[SnippetRecord]) -> Result<Vec<Tensor<f32>>> {
    let path = dir.join(embio::container_file_name(model, layer));
    ensure!(path.is_file(), "missing upstream artifact {}", path.display());
    let c = embio::read_container(&path)?;
    let [t, d] = c.meta.shape;
    manifest
        .iter()
        .map(|r| {
            let rec = c.get(&r.snippet_id).ok_or_else(|| anyhow!("{} has no record for {}", path.display(), r.snippet_id))?;
            Ok(Tensor::from_vec(vec![1, t, d], rec.values.clone())?)
        })
        .collect()
}

fn probe_matrix(
    cfg: &RunConfig,
    model: &str,
    layers: &[u32],
    manifest: &[SnippetRecord],
    splits: &[SplitSets],
    out: &Path,
    axis: FeatureAxis,
    load: &dyn Fn(u32) -> Result<Vec<Tensor<f32>>>,
) -> Result<MaeMatrix> {
    fs::create_dir_all(out.join("reports"))?;
    fs::create_dir_all(out.join("checkpoints"))?;
    let mut matrix = MaeMatrix::new(model, splits.iter().map(|s| split_id(s.seed)).collect(), layers.to_vec());
    let workers = cfg.resolved_jobs();
    for &layer in layers {
        let inputs = load(layer)?;
        let results = run_pool(splits.len(), workers, |j| {
            probe_job(cfg, model, layer, &splits[j], manifest, &inputs, axis, out)
        })?;
        for r in results {
            matrix.set(&r.split, r.layer, r.test_mae)?;
        }
    }
    write_json(&out.join(format!("mae_matrix_{model}.json")), &matrix)?;
    Ok(matrix)
}

fn load_splits(cfg: &RunConfig, manifest: &[SnippetRecord]) -> Result<Vec<SplitSets>> {
    let dir = cfg.input_dir(&cfg.splits, "splits")?;
    ensure!(!cfg.seeds.is_empty(), "no split seeds given");
    cfg.seeds.iter().map(|&s| split_indices(manifest, &load_split(&dir, s)?)).collect()
}

/// One probe per (layer, split) on exported layer containers; writes a report
/// and checkpoint per job and `mae_matrix_<model>.json`.
pub fn cmd_probe(cfg: &RunConfig) -> Result<MaeMatrix> {
    let manifest = read_manifest(&cfg.input_file(&cfg.manifest, "manifest")?)?;
    let emb = cfg.input_dir(&cfg.embeddings, "embeddings")?;
    let splits = load_splits(cfg, &manifest)?;
    let layers = match &cfg.layers {
        Some(l) => l.clone(),
        None => available_layers(&emb, &cfg.model)?,
    };
    ensure!(!layers.is_empty(), "no {}_layerNN.pemb containers in {}", cfg.model, emb.display());
    for &l in &layers {
        let path = emb.join(embio::container_file_name(&cfg.model, l));
        ensure!(path.is_file(), "missing upstream artifact {}", path.display());
    }
    let out = cfg.out_dir()?;
    probe_matrix(cfg, &cfg.model, &layers, &manifest, &splits, &out, FeatureAxis::Columns, &|l| {
        load_layer_inputs(&emb, &cfg.model, l, &manifest)
    })
}

/// The same probe trained on 4-channel hand-crafted features of each snippet.
pub fn cmd_baseline(cfg: &RunConfig) -> Result<MaeMatrix> {
    let manifest = read_manifest(&cfg.input_file(&cfg.manifest, "manifest")?)?;
    let snippets = cfg.input_dir(&cfg.snippets, "snippets")?;
    let splits = load_splits(cfg, &manifest)?;
    let out = cfg.out_dir()?;
    let audio = load_snippet_audio(&snippets, &manifest)?;
    let features = audio.iter().map(dsp::baseline_features).collect::<std::result::Result<Vec<_>, _>>()?;
    let labels: Vec<u32> = manifest.iter().map(|r| r.hr_bpm).collect();
    let set = LabeledSet::from_features(&features, labels)?;
    probe_matrix(cfg, BASELINE_MODEL, &[1], &manifest, &splits, &out, FeatureAxis::Rows, &|_| Ok(set.inputs.clone()))
}

/// Summary tables for every `mae_matrix_<model>.json` in the results directory.
pub fn cmd_report(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.input_dir(&cfg.results, "results")?;
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        name.starts_with("mae_matrix_") && name.ends_with(".json")
    });
    files.sort();
    ensure!(!files.is_empty(), "missing upstream artifact: no mae_matrix_*.json in {}", dir.display());
    let matrices = files
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<MaeMatrix>(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(eval::emit_report(&matrices, &cfg.out_dir()?)?)
}
