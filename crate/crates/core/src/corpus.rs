//! Phonocardiogram corpus handling: recordings, segmentation annotations,
//! 5 s snippet windowing with average heart-rate labels, subject-disjoint
//! splits and heart-rate histograms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::Pcm;
use crate::rng::Rng;
use crate::wav::{self, WavError};

pub const SNIPPET_SECONDS: f64 = 5.0;
pub const STRIDE_SECONDS: f64 = 1.0;
pub const HR_MIN: u32 = 40;
pub const HR_MAX: u32 = 180;
pub const HR_CLASSES: usize = (HR_MAX - HR_MIN + 1) as usize;

/// Largest gap (s) between consecutive labeled events still treated as contiguous.
pub const GAP_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{}unknown state code at row {row}: {code:?}", path_prefix(.path))]
    UnknownState {
        path: Option<String>,
        row: usize,
        code: String,
    },
    #[error("{}malformed annotation at row {row}: {msg}", path_prefix(.path))]
    BadRow {
        path: Option<String>,
        row: usize,
        msg: String,
    },
    #[error("undeterminable heart rate: {0} S1 onsets in window, need at least 2")]
    UndeterminableHr(usize),
    #[error("S1 onsets must be strictly increasing")]
    UnorderedOnsets,
    #[error("need at least 3 subjects to split, got {0}")]
    TooFewSubjects(usize),
    #[error("split with seed {seed} leaves the {set} set empty")]
    EmptySet { seed: u64, set: SplitSet },
    #[error("split verification failed: {0}")]
    Verification(String),
    #[error("csv error in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("invalid field {field:?} in {path}")]
    BadField { path: String, field: String },
}

fn path_prefix(path: &Option<String>) -> String {
    path.as_ref().map(|p| format!("{p}: ")).unwrap_or_default()
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub recording_id: String,
    pub subject_id: String,
    pub auscultation_site: String,
    pub audio: Pcm,
}

impl Recording {
    /// Build from a `<subject>_<site>` style identifier.
    pub fn from_id(recording_id: &str, audio: Pcm) -> Self {
        let (subject, site) = split_recording_id(recording_id);
        Self {
            recording_id: recording_id.to_string(),
            subject_id: subject,
            auscultation_site: site,
            audio,
        }
    }
}

/// `2530_AV` → (`2530`, `AV`); `50782_MV_1` → (`50782`, `MV_1`).
pub fn split_recording_id(id: &str) -> (String, String) {
    match id.split_once('_') {
        Some((s, site)) => (s.to_string(), site.to_string()),
        None => (id.to_string(), String::new()),
    }
}

/// Load a mono PCM16 WAV; the file stem is the recording id.
pub fn load_recording(path: &Path) -> Result<Recording> {
    let audio = wav::read(path)?;
    if audio.is_empty() {
        return Err(CorpusError::Wav(WavError::Unsupported(format!(
            "{} has no samples",
            path.display()
        ))));
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Recording::from_id(&stem, audio))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeartState {
    Unlabeled,
    S1,
    Systole,
    S2,
    Diastole,
}

impl HeartState {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Self::Unlabeled,
            1 => Self::S1,
            2 => Self::Systole,
            3 => Self::S2,
            4 => Self::Diastole,
            _ => return None,
        })
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Unlabeled => 0,
            Self::S1 => 1,
            Self::Systole => 2,
            Self::S2 => 3,
            Self::Diastole => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub onset: f64,
    pub offset: f64,
    pub state: HeartState,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Annotation {
    pub events: Vec<Event>,
}

impl Annotation {
    pub fn s1_onsets(&self) -> impl Iterator<Item = f64> + '_ {
        self.events
            .iter()
            .filter(|e| e.state == HeartState::S1)
            .map(|e| e.onset)
    }

    /// Tab-separated `onset offset code` rows with six decimals.
    pub fn to_tsv(&self) -> String {
        self.events
            .iter()
            .map(|e| format!("{:.6}\t{:.6}\t{}\n", e.onset, e.offset, e.state.code()))
            .collect()
    }

    /// Longest run of abutting labeled (non-`Unlabeled`) events as `(start, end)`.
    /// Ties go to the earliest run.
    pub fn longest_labeled_region(&self) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        let mut current: Option<(f64, f64)> = None;
        for e in &self.events {
            if e.state == HeartState::Unlabeled {
                current = None;
                continue;
            }
            current = match current {
                Some((start, end)) if e.onset - end <= GAP_TOLERANCE => Some((start, end.max(e.offset))),
                _ => Some((e.onset, e.offset)),
            };
            let (s, t) = current.unwrap();
            if best.is_none_or(|(bs, bt)| t - s > bt - bs + EPS) {
                best = Some((s, t));
            }
        }
        best
    }
}

/// Parse annotation text; `path` only decorates error messages.
pub fn parse_annotation(text: &str, path: Option<&str>) -> Result<Annotation> {
    let mut events: Vec<Event> = Vec::new();
    let path = path.map(str::to_string);
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let bad = |msg: String| CorpusError::BadRow {
            path: path.clone(),
            row,
            msg,
        };
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let onset: f64 = fields[0]
            .parse()
            .map_err(|_| bad(format!("onset {:?} is not a number", fields[0])))?;
        let offset: f64 = fields[1]
            .parse()
            .map_err(|_| bad(format!("offset {:?} is not a number", fields[1])))?;
        let state = fields[2]
            .parse::<u8>()
            .ok()
            .and_then(HeartState::from_code)
            .ok_or_else(|| CorpusError::UnknownState {
                path: path.clone(),
                row,
                code: fields[2].to_string(),
            })?;
        if !onset.is_finite() || !offset.is_finite() || offset <= onset {
            return Err(bad(format!("offset {offset} must exceed onset {onset}")));
        }
        if let Some(prev) = events.last() {
            if onset < prev.onset {
                return Err(bad(format!("onset {onset} precedes previous onset {}", prev.onset)));
            }
        }
        events.push(Event { onset, offset, state });
    }
    Ok(Annotation { events })
}

pub fn load_annotation(path: &Path) -> Result<Annotation> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_annotation(&text, Some(&path.display().to_string()))
}

/// Average heart rate `round(60 (K-1) / (t_last - t_first))`, rounded half up.
pub fn average_hr(s1_onsets: &[f64]) -> Result<u32> {
    if s1_onsets.len() < 2 {
        return Err(CorpusError::UndeterminableHr(s1_onsets.len()));
    }
    if s1_onsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CorpusError::UnorderedOnsets);
    }
    let span = s1_onsets[s1_onsets.len() - 1] - s1_onsets[0];
    let bpm = 60.0 * (s1_onsets.len() - 1) as f64 / span;
    Ok((bpm + 0.5 + EPS).floor() as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snippet {
    pub snippet_id: String,
    pub recording_id: String,
    pub subject_id: String,
    pub start: f64,
    pub audio: Pcm,
    pub hr_label: u32,
}

impl Snippet {
    pub fn record(&self) -> SnippetRecord {
        SnippetRecord {
            snippet_id: self.snippet_id.clone(),
            recording_id: self.recording_id.clone(),
            subject_id: self.subject_id.clone(),
            start_s: self.start,
            hr_bpm: self.hr_label,
        }
    }
}

/// Why candidate windows were dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WindowStats {
    pub windows: usize,
    pub kept: usize,
    pub too_few_onsets: usize,
    pub out_of_range: usize,
    pub beyond_audio: usize,
}

/// Number of 5 s windows at 1 s stride that fit in a region of `len` seconds.
pub fn window_count(len: f64) -> usize {
    if len + EPS < SNIPPET_SECONDS {
        0
    } else {
        ((len - SNIPPET_SECONDS + EPS) / STRIDE_SECONDS).floor() as usize + 1
    }
}

pub fn window_snippets(r: &Recording, a: &Annotation) -> Vec<Snippet> {
    window_snippets_with_stats(r, a).0
}

/// Slide 5 s windows over the longest labeled region and label each by its
/// S1 onsets in `[start, start + 5)`.
pub fn window_snippets_with_stats(r: &Recording, a: &Annotation) -> (Vec<Snippet>, WindowStats) {
    let mut stats = WindowStats::default();
    let Some((region_start, region_end)) = a.longest_labeled_region() else {
        return (Vec::new(), stats);
    };
    let rate = r.audio.rate as f64;
    let len = (SNIPPET_SECONDS * rate).round() as usize;
    let onsets: Vec<f64> = a.s1_onsets().collect();
    let mut out = Vec::new();
    for k in 0..window_count(region_end - region_start) {
        stats.windows += 1;
        let start = region_start + k as f64 * STRIDE_SECONDS;
        let first = (start * rate).round() as usize;
        if first + len > r.audio.len() {
            stats.beyond_audio += 1;
            continue;
        }
        let inside: Vec<f64> = onsets
            .iter()
            .copied()
            .filter(|t| *t >= start - EPS && *t < start + SNIPPET_SECONDS - EPS)
            .collect();
        let hr = match average_hr(&inside) {
            Ok(hr) => hr,
            Err(_) => {
                stats.too_few_onsets += 1;
                continue;
            }
        };
        if !(HR_MIN..=HR_MAX).contains(&hr) {
            stats.out_of_range += 1;
            continue;
        }
        stats.kept += 1;
        out.push(Snippet {
            snippet_id: format!("{}_w{:03}", r.recording_id, k),
            recording_id: r.recording_id.clone(),
            subject_id: r.subject_id.clone(),
            start,
            audio: Pcm {
                samples: r.audio.samples[first..first + len].to_vec(),
                rate: r.audio.rate,
            },
            hr_label: hr,
        });
    }
    (out, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSet {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

impl FromStr for SplitSet {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown set {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    pub assignment: BTreeMap<String, SplitSet>,
}

impl SplitSpec {
    pub fn subjects(&self, set: SplitSet) -> BTreeSet<&str> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == set)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn set_of(&self, subject: &str) -> Option<SplitSet> {
        self.assignment.get(subject).copied()
    }

    /// Each set non-empty and every manifest subject assigned to exactly one set.
    pub fn verify(&self, manifest: &[SnippetRecord]) -> Result<()> {
        for set in [SplitSet::Train, SplitSet::Val, SplitSet::Test] {
            if self.subjects(set).is_empty() {
                return Err(CorpusError::EmptySet { seed: self.seed, set });
            }
        }
        let mut seen: BTreeMap<&str, SplitSet> = BTreeMap::new();
        for rec in manifest {
            let set = self.set_of(&rec.subject_id).ok_or_else(|| {
                CorpusError::Verification(format!("subject {} is unassigned", rec.subject_id))
            })?;
            if let Some(prev) = seen.insert(&rec.subject_id, set) {
                if prev != set {
                    return Err(CorpusError::Verification(format!(
                        "subject {} appears in {prev} and {set}",
                        rec.subject_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("subject_id,set\n");
        for (subject, set) in &self.assignment {
            s.push_str(&format!("{subject},{set}\n"));
        }
        s
    }

    pub fn from_csv(text: &str, seed: u64, path: &str) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for row in reader.records() {
            let row = row.map_err(|source| CorpusError::Csv {
                path: path.to_string(),
                source,
            })?;
            let set: SplitSet = row
                .get(1)
                .unwrap_or_default()
                .parse()
                .map_err(|field: String| CorpusError::BadField {
                    path: path.to_string(),
                    field,
                })?;
            assignment.insert(row.get(0).unwrap_or_default().to_string(), set);
        }
        Ok(Self { seed, assignment })
    }
}

/// Seeded subject-level split balanced by snippet count.
///
/// Subjects are sorted by id, shuffled with [`Rng::new(seed)`](Rng::new),
/// then assigned greedily to test until it holds ≥10% of snippets, then to
/// val until it holds ≥10%, and the rest to train.
pub fn make_splits(subjects: &[(String, usize)], seed: u64) -> Result<SplitSpec> {
    let mut ordered: Vec<(String, usize)> = subjects.to_vec();
    ordered.sort();
    ordered.dedup_by(|a, b| a.0 == b.0);
    if ordered.len() < 3 {
        return Err(CorpusError::TooFewSubjects(ordered.len()));
    }
    let total: usize = ordered.iter().map(|(_, n)| n).sum();
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut ordered);

    let mut assignment = BTreeMap::new();
    let (mut test, mut val) = (0usize, 0usize);
    let reached = |count: usize, n_subjects: usize| n_subjects > 0 && 10 * count >= total;
    let (mut n_test, mut n_val) = (0, 0);
    for (subject, n) in ordered {
        let set = if !reached(test, n_test) {
            test += n;
            n_test += 1;
            SplitSet::Test
        } else if !reached(val, n_val) {
            val += n;
            n_val += 1;
            SplitSet::Val
        } else {
            SplitSet::Train
        };
        assignment.insert(subject, set);
    }
    let spec = SplitSpec { seed, assignment };
    for set in [SplitSet::Train, SplitSet::Val, SplitSet::Test] {
        if spec.subjects(set).is_empty() {
            return Err(CorpusError::EmptySet { seed, set });
        }
    }
    Ok(spec)
}

/// Counts per integer bpm in `[40, 180]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HrHistogram {
    pub counts: Vec<u64>,
}

impl HrHistogram {
    pub fn count(&self, bpm: u32) -> u64 {
        if (HR_MIN..=HR_MAX).contains(&bpm) {
            self.counts[(bpm - HR_MIN) as usize]
        } else {
            0
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn from_labels(labels: impl IntoIterator<Item = u32>) -> Self {
        let mut counts = vec![0; HR_CLASSES];
        for bpm in labels {
            if (HR_MIN..=HR_MAX).contains(&bpm) {
                counts[(bpm - HR_MIN) as usize] += 1;
            }
        }
        Self { counts }
    }
}

pub fn hr_histogram(snippets: &[Snippet]) -> HrHistogram {
    HrHistogram::from_labels(snippets.iter().map(|s| s.hr_label))
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetRecord {
    pub snippet_id: String,
    pub recording_id: String,
    pub subject_id: String,
    pub start_s: f64,
    pub hr_bpm: u32,
}

/// `snippet_id,recording_id,subject_id,start_s,hr_bpm` with six-decimal starts.
pub fn manifest_to_csv(records: &[SnippetRecord]) -> String {
    let mut s = String::from("snippet_id,recording_id,subject_id,start_s,hr_bpm\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            r.snippet_id, r.recording_id, r.subject_id, r.start_s, r.hr_bpm
        ));
    }
    s
}

pub fn read_manifest(path: &Path) -> Result<Vec<SnippetRecord>> {
    let p = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|source| CorpusError::Csv {
        path: p.clone(),
        source,
    })?;
    reader
        .deserialize()
        .map(|r| r.map_err(|source| CorpusError::Csv { path: p.clone(), source }))
        .collect()
}

/// Snippet counts per subject, sorted by subject id.
pub fn subject_counts(records: &[SnippetRecord]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(&r.subject_id).or_default() += 1;
    }
    counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// WAV/TSV files of a corpus directory, paired by basename.
#[derive(Debug, Clone, Default)]
pub struct CorpusListing {
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub unpaired: Vec<PathBuf>,
}

pub fn scan_corpus(dir: &Path) -> Result<CorpusListing> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut wavs = BTreeMap::new();
    let mut tsvs = BTreeMap::new();
    for entry in entries {
        let path = entry
            .map_err(|source| CorpusError::Io {
                path: dir.display().to_string(),
                source,
            })?
            .path();
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        let ext = path.extension().map(|s| s.to_string_lossy().to_ascii_lowercase());
        match (stem, ext.as_deref()) {
            (Some(stem), Some("wav")) => {
                wavs.insert(stem, path);
            }
            (Some(stem), Some("tsv")) => {
                tsvs.insert(stem, path);
            }
            _ => {}
        }
    }
    let mut listing = CorpusListing::default();
    for (stem, wav) in &wavs {
        match tsvs.get(stem) {
            Some(tsv) => listing.pairs.push((wav.clone(), tsv.clone())),
            None => listing.unpaired.push(wav.clone()),
        }
    }
    for (stem, tsv) in tsvs {
        if !wavs.contains_key(&stem) {
            listing.unpaired.push(tsv);
        }
    }
    listing.unpaired.sort();
    Ok(listing)
}
