//! Signal-processing primitives: resampling, STFT, log-mel, MFCC, Welch PSD
//! and RMS energy, plus the four-channel baseline feature stack.
//!
//! Everything here is a pure function of its inputs and works in `f64`;
//! conversion to the 32-bit training precision happens at the model boundary.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

/// Floor applied before taking logarithms so silence maps to `ln(1e-10)`.
pub const LOG_FLOOR: f64 = 1e-10;

/// Sample rate the audio encoder and the baseline features operate at.
pub const ENCODER_RATE: u32 = 16_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("sample rate must be positive")]
    ZeroRate,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("{what} of {seconds} s at {rate} Hz is not a whole number of samples")]
    FractionalLength {
        what: &'static str,
        seconds: f64,
        rate: u32,
    },
    #[error("signal of {len} samples is shorter than one frame of {frame} samples")]
    TooShort { len: usize, frame: usize },
    #[error("empty signal")]
    Empty,
    #[error("fmax {fmax} Hz exceeds the Nyquist frequency {nyquist} Hz")]
    AboveNyquist { fmax: f64, nyquist: f64 },
    #[error("invalid mel range: fmin {fmin} Hz must be below fmax {fmax} Hz")]
    BadMelRange { fmin: f64, fmax: f64 },
    #[error("need at least one {0}")]
    ZeroCount(&'static str),
    #[error("requested {requested} cepstral coefficients from {available} mel bands")]
    TooManyCoefficients { requested: usize, available: usize },
    #[error("expected a {0} spectrogram")]
    WrongKind(&'static str),
    #[error("overlap fraction {0} must lie in [0, 1)")]
    BadOverlap(f64),
    #[error("frame policy leaves no frames (have {0})")]
    NoFrames(usize),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Pcm {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl Pcm {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        let pcm = Self { samples, rate };
        pcm.validate()?;
        Ok(pcm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate == 0 {
            return Err(DspError::ZeroRate);
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::NonFinite(i));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinAxis {
    LinearHz,
    Mel,
}

/// Time-frequency matrix with bins as rows and frames as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Matrix,
    pub bin_axis: BinAxis,
    /// Seconds between consecutive frames.
    pub frame_hop: f64,
    pub log_scaled: bool,
    /// Sample rate of the audio the frames were cut from.
    pub rate: u32,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.values.rows
    }

    pub fn frames(&self) -> usize {
        self.values.cols
    }
}

/// Frame length and hop in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub frame: f64,
    pub hop: f64,
}

impl FrameSpec {
    /// 25 ms Hann frames with 10 ms hops.
    pub const ENCODER: FrameSpec = FrameSpec {
        frame: 0.025,
        hop: 0.010,
    };

    fn lengths(&self, rate: u32) -> Result<(usize, usize)> {
        let frame = whole_samples("frame", self.frame, rate)?;
        let hop = whole_samples("hop", self.hop, rate)?;
        if frame == 0 {
            return Err(DspError::ZeroCount("sample per frame"));
        }
        if hop == 0 {
            return Err(DspError::ZeroCount("sample per hop"));
        }
        Ok((frame, hop))
    }
}

fn whole_samples(what: &'static str, seconds: f64, rate: u32) -> Result<usize> {
    let exact = seconds * rate as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-6 || rounded < 0.0 {
        return Err(DspError::FractionalLength {
            what,
            seconds,
            rate,
        });
    }
    Ok(rounded as usize)
}

/// Number of full frames: `floor((len - frame) / hop) + 1`, or 0 when `len < frame`.
pub fn frame_count(len: usize, frame: usize, hop: usize) -> usize {
    if len < frame {
        0
    } else {
        (len - frame) / hop + 1
    }
}

/// Periodic Hann window `0.5 (1 - cos(2πn/N))`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect()
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

const RESAMPLE_HALF_TAPS: i64 = 8;

/// Windowed-sinc polyphase resampler, 16 taps per phase.
///
/// Output length is `ceil(len · target / rate)`. Each phase is normalized to
/// unit DC gain; phase 0 of an integer upsampling ratio reproduces the input
/// samples exactly.
pub fn resample(x: &Pcm, target_rate: u32) -> Result<Pcm> {
    x.validate()?;
    if target_rate == 0 {
        return Err(DspError::ZeroRate);
    }
    if target_rate == x.rate {
        return Ok(x.clone());
    }
    let g = gcd(x.rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = x.rate as u64 / g;
    let cutoff = (up as f64 / down as f64).min(1.0);

    let taps = 2 * RESAMPLE_HALF_TAPS as usize;
    let mut phases = vec![0.0; up as usize * taps];
    for p in 0..up as usize {
        let frac = p as f64 / up as f64;
        let row = &mut phases[p * taps..(p + 1) * taps];
        for (slot, j) in row.iter_mut().zip(-RESAMPLE_HALF_TAPS + 1..=RESAMPLE_HALF_TAPS) {
            let t = j as f64 - frac;
            let w = 0.5 * (1.0 + (PI * t / RESAMPLE_HALF_TAPS as f64).cos());
            *slot = cutoff * sinc(cutoff * t) * w;
        }
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }

    let len = x.samples.len() as u64;
    let out_len = (len * up).div_ceil(down);
    let mut out = Vec::with_capacity(out_len as usize);
    for n in 0..out_len {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = (pos % up) as usize;
        let row = &phases[phase * taps..(phase + 1) * taps];
        let mut acc = 0.0;
        for (w, j) in row.iter().zip(-RESAMPLE_HALF_TAPS + 1..=RESAMPLE_HALF_TAPS) {
            let idx = base + j;
            if idx >= 0 && (idx as u64) < len {
                acc += w * x.samples[idx as usize];
            }
        }
        out.push(acc);
    }
    Ok(Pcm {
        samples: out,
        rate: target_rate,
    })
}

/// Power STFT `|X_k|²` with a periodic Hann window; bins `0..=frame/2`.
pub fn stft(x: &Pcm, spec: FrameSpec) -> Result<Spectrogram> {
    x.validate()?;
    let (frame_len, hop_len) = spec.lengths(x.rate)?;
    let frames = frame_count(x.len(), frame_len, hop_len);
    if frames == 0 {
        return Err(DspError::TooShort {
            len: x.len(),
            frame: frame_len,
        });
    }
    let bins = frame_len / 2 + 1;
    let window = hann_periodic(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let mut buf = vec![Complex::new(0.0, 0.0); frame_len];
    let mut values = Matrix::zeros(bins, frames);
    for f in 0..frames {
        let start = f * hop_len;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(x.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (b, c) in buf.iter().take(bins).enumerate() {
            values.set(b, f, c.norm_sqr());
        }
    }
    Ok(Spectrogram {
        values,
        bin_axis: BinAxis::LinearHz,
        frame_hop: spec.hop,
        log_scaled: false,
        rate: x.rate,
    })
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Peak frequencies (Hz) of the `n_mels` triangles between `fmin` and `fmax`.
pub fn mel_center_frequencies(n_mels: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (1..=n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular HTK filterbank, `n_mels` rows over `n_fft/2 + 1` bins, unit peak.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, rate: u32, fmin: f64, fmax: f64) -> Matrix {
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Matrix::zeros(n_mels, bins);
    for m in 0..n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let f = b as f64 * rate as f64 / n_fft as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb.set(m, b, w);
        }
    }
    fb
}

/// `ln(max(mel_energy, 1e-10))` of a linear-frequency power spectrogram.
pub fn logmel(s: &Spectrogram, n_mels: usize, fmin: f64, fmax: f64) -> Result<Spectrogram> {
    if s.bin_axis != BinAxis::LinearHz || s.log_scaled {
        return Err(DspError::WrongKind("linear-frequency power"));
    }
    if n_mels == 0 {
        return Err(DspError::ZeroCount("mel band"));
    }
    let nyquist = s.rate as f64 / 2.0;
    if fmax > nyquist + 1e-9 {
        return Err(DspError::AboveNyquist { fmax, nyquist });
    }
    if !(fmin >= 0.0 && fmin < fmax) {
        return Err(DspError::BadMelRange { fmin, fmax });
    }
    let n_fft = 2 * (s.bins() - 1);
    let fb = mel_filterbank(n_mels, n_fft, s.rate, fmin, fmax);
    let frames = s.frames();
    let mut values = Matrix::zeros(n_mels, frames);
    for m in 0..n_mels {
        let weights = fb.row(m);
        for f in 0..frames {
            let mut e = 0.0;
            for (b, w) in weights.iter().enumerate() {
                if *w != 0.0 {
                    e += w * s.values.get(b, f);
                }
            }
            values.set(m, f, e.max(LOG_FLOOR).ln());
        }
    }
    Ok(Spectrogram {
        values,
        bin_axis: BinAxis::Mel,
        frame_hop: s.frame_hop,
        log_scaled: true,
        rate: s.rate,
    })
}

/// How the frame axis is sized before patching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FramePolicy {
    Keep,
    /// Drop trailing frames down to the largest multiple (498 → 496 for 5 s).
    TruncateToMultiple(usize),
    /// Pad with silence (or truncate) to exactly this many frames (1024 for 10 s).
    PadTo(usize),
}

pub fn fit_frames(s: &Spectrogram, policy: FramePolicy) -> Result<Spectrogram> {
    let target = match policy {
        FramePolicy::Keep => return Ok(s.clone()),
        FramePolicy::TruncateToMultiple(k) => {
            if k == 0 {
                return Err(DspError::ZeroCount("frame multiple"));
            }
            s.frames() / k * k
        }
        FramePolicy::PadTo(n) => n,
    };
    if target == 0 {
        return Err(DspError::NoFrames(s.frames()));
    }
    let fill = if s.log_scaled { LOG_FLOOR.ln() } else { 0.0 };
    let mut values = Matrix::filled(s.bins(), target, fill);
    let keep = target.min(s.frames());
    for b in 0..s.bins() {
        values.data[b * target..b * target + keep].copy_from_slice(&s.values.row(b)[..keep]);
    }
    Ok(Spectrogram {
        values,
        ..s.clone()
    })
}

/// Parameters of the encoder-facing log-mel front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMelConfig {
    pub n_mels: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub frames: FrameSpec,
    pub policy: FramePolicy,
}

impl LogMelConfig {
    /// 128 mels, 25/10 ms, frames truncated to a multiple of the 16-frame patch.
    pub const fn encoder() -> Self {
        Self {
            n_mels: 128,
            fmin: 0.0,
            fmax: None,
            frames: FrameSpec::ENCODER,
            policy: FramePolicy::TruncateToMultiple(16),
        }
    }

    /// As [`LogMelConfig::encoder`] but padded to 1024 frames (10 s inputs).
    pub const fn padded_1024() -> Self {
        Self {
            policy: FramePolicy::PadTo(1024),
            ..Self::encoder()
        }
    }
}

impl Default for LogMelConfig {
    fn default() -> Self {
        Self::encoder()
    }
}

/// STFT, mel projection and frame fitting in one call.
pub fn log_mel_spectrogram(x: &Pcm, cfg: &LogMelConfig) -> Result<Spectrogram> {
    let power = stft(x, cfg.frames)?;
    let fmax = cfg.fmax.unwrap_or(x.rate as f64 / 2.0);
    let lm = logmel(&power, cfg.n_mels, cfg.fmin, fmax)?;
    fit_frames(&lm, cfg.policy)
}

/// Orthonormal DCT-II basis, `n_out × n_in`.
pub fn dct2_basis(n_out: usize, n_in: usize) -> Matrix {
    let mut basis = Matrix::zeros(n_out, n_in);
    let n = n_in as f64;
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for i in 0..n_in {
            basis.set(
                k,
                i,
                scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos(),
            );
        }
    }
    basis
}

/// Orthonormal DCT-II along the mel axis of a log-mel spectrogram.
pub fn mfcc(m: &Spectrogram, n_coeffs: usize) -> Result<Matrix> {
    if m.bin_axis != BinAxis::Mel || !m.log_scaled {
        return Err(DspError::WrongKind("log-mel"));
    }
    if n_coeffs > m.bins() {
        return Err(DspError::TooManyCoefficients {
            requested: n_coeffs,
            available: m.bins(),
        });
    }
    let basis = dct2_basis(n_coeffs, m.bins());
    let frames = m.frames();
    let mut out = Matrix::zeros(n_coeffs, frames);
    for k in 0..n_coeffs {
        let b = basis.row(k);
        for f in 0..frames {
            let mut acc = 0.0;
            for (i, w) in b.iter().enumerate() {
                acc += w * m.values.get(i, f);
            }
            out.set(k, f, acc);
        }
    }
    Ok(out)
}

/// One-sided Welch power spectrum with a periodic Hann window.
///
/// Each segment periodogram is `|X_k|² / (N Σw²)`, doubled for the interior
/// bins, so the bins sum to the mean signal power.
pub fn psd(x: &Pcm, segment: f64, overlap_fraction: f64) -> Result<Vec<f64>> {
    x.validate()?;
    if x.is_empty() {
        return Err(DspError::Empty);
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DspError::BadOverlap(overlap_fraction));
    }
    let seg = whole_samples("segment", segment, x.rate)?;
    if seg == 0 {
        return Err(DspError::ZeroCount("sample per segment"));
    }
    if x.len() < seg {
        return Err(DspError::TooShort {
            len: x.len(),
            frame: seg,
        });
    }
    let hop = (seg - (overlap_fraction * seg as f64).round() as usize).max(1);
    let window = hann_periodic(seg);
    let energy: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);
    let bins = seg / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    let segments = frame_count(x.len(), seg, hop);
    for s in 0..segments {
        let start = s * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(x.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let one_sided = if k == 0 || (seg % 2 == 0 && k == seg / 2) { 1.0 } else { 2.0 };
            *a += one_sided * buf[k].norm_sqr() / (seg as f64 * energy);
        }
    }
    acc.iter_mut().for_each(|a| *a /= segments as f64);
    Ok(acc)
}

/// Per-frame `sqrt(mean(x²))` using the STFT framing.
pub fn rms_energy(x: &Pcm, spec: FrameSpec) -> Result<Vec<f64>> {
    x.validate()?;
    let (frame_len, hop_len) = spec.lengths(x.rate)?;
    let frames = frame_count(x.len(), frame_len, hop_len);
    if frames == 0 {
        return Err(DspError::TooShort {
            len: x.len(),
            frame: frame_len,
        });
    }
    Ok((0..frames)
        .map(|f| {
            let chunk = &x.samples[f * hop_len..f * hop_len + frame_len];
            (chunk.iter().map(|s| s * s).sum::<f64>() / frame_len as f64).sqrt()
        })
        .collect())
}

/// Linear interpolation of `src` onto `n` evenly spaced points spanning it.
pub fn interpolate_linear(src: &[f64], n: usize) -> Vec<f64> {
    match (src.len(), n) {
        (_, 0) => Vec::new(),
        (0, _) => vec![0.0; n],
        (1, _) => vec![src[0]; n],
        (_, 1) => vec![src[0]],
        (len, _) => (0..n)
            .map(|i| {
                let pos = i as f64 * (len - 1) as f64 / (n - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                let t = pos - lo as f64;
                src[lo] * (1.0 - t) + src[hi] * t
            })
            .collect(),
    }
}

/// Channels sharing one `[H × W]` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub channels: Vec<Matrix>,
    pub channel_names: Vec<String>,
}

impl FeatureStack {
    pub fn shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.channels.first().map_or((0, 0), Matrix::shape);
        (self.channels.len(), h, w)
    }
}

/// Settings of the acoustic-feature baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub logmel: LogMelConfig,
    pub n_mfcc: usize,
    pub psd_segment: f64,
    pub psd_overlap: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            logmel: LogMelConfig::encoder(),
            n_mfcc: 40,
            psd_segment: 1.0,
            psd_overlap: 0.5,
        }
    }
}

/// LogMel, MFCC, PSD and RMS channels on the log-mel grid.
///
/// Audio is first resampled to 16 kHz. MFCC rows and the (log) PSD are
/// interpolated along the frequency axis onto the mel rows; the PSD column is
/// repeated for every frame and the RMS row for every mel row.
pub fn baseline_features(x: &Pcm) -> Result<FeatureStack> {
    baseline_features_with(x, &BaselineConfig::default())
}

pub fn baseline_features_with(x: &Pcm, cfg: &BaselineConfig) -> Result<FeatureStack> {
    let audio = resample(x, ENCODER_RATE)?;
    let lm = log_mel_spectrogram(&audio, &cfg.logmel)?;
    let (h, w) = lm.values.shape();

    let coeffs = mfcc(&lm, cfg.n_mfcc)?;
    let mut mfcc_ch = Matrix::zeros(h, w);
    for f in 0..w {
        for (r, v) in interpolate_linear(&coeffs.column(f), h).into_iter().enumerate() {
            mfcc_ch.set(r, f, v);
        }
    }

    let spectrum: Vec<f64> = psd(&audio, cfg.psd_segment, cfg.psd_overlap)?
        .into_iter()
        .map(|p| p.max(LOG_FLOOR).ln())
        .collect();
    let psd_col = interpolate_linear(&spectrum, h);
    let mut psd_ch = Matrix::zeros(h, w);
    for (r, v) in psd_col.iter().enumerate() {
        psd_ch.data[r * w..(r + 1) * w].fill(*v);
    }

    let rms = rms_energy(&audio, cfg.logmel.frames)?;
    let mut rms_ch = Matrix::zeros(h, w);
    for r in 0..h {
        for f in 0..w {
            rms_ch.set(r, f, rms.get(f).copied().unwrap_or(0.0));
        }
    }

    Ok(FeatureStack {
        channels: vec![lm.values, mfcc_ch, psd_ch, rms_ch],
        channel_names: ["logmel", "mfcc", "psd", "rms"].map(String::from).to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, rate: u32, n: usize) -> Pcm {
        let samples = (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Pcm::new(samples, rate).unwrap()
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
            .0
    }

    // Naive DFT, independent of the FFT path.
    fn dft_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn pcm_rejects_nan_and_zero_rate() {
        assert_eq!(Pcm::new(vec![0.0, f64::NAN], 4000), Err(DspError::NonFinite(1)));
        assert_eq!(Pcm::new(vec![0.0], 0), Err(DspError::ZeroRate));
    }

    #[test]
    fn resample_identity() {
        let x = tone(100.0, 0.5, 4000, 1000);
        assert_eq!(resample(&x, 4000).unwrap(), x);
    }

    #[test]
    fn resample_length_scales() {
        let x = tone(100.0, 0.5, 4000, 4000);
        let y = resample(&x, 16_000).unwrap();
        assert_eq!(y.rate, 16_000);
        assert_eq!(y.len(), 16_000);
        let z = resample(&y, 4000).unwrap();
        assert_eq!(z.len(), 4000);
    }

    #[test]
    fn resample_upsampling_keeps_original_samples() {
        let x = tone(100.0, 0.5, 4000, 400);
        let y = resample(&x, 16_000).unwrap();
        for (i, v) in x.samples.iter().enumerate() {
            assert!((y.samples[4 * i] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_rejects_non_finite() {
        let x = Pcm {
            samples: vec![0.0, f64::INFINITY],
            rate: 4000,
        };
        assert!(matches!(resample(&x, 16_000), Err(DspError::NonFinite(1))));
    }

    #[test]
    fn resample_preserves_dominant_frequency() {
        let x = tone(100.0, 0.8, 4000, 8000);
        let y = resample(&x, 16_000).unwrap();
        let spec = FrameSpec { frame: 0.1, hop: 0.05 };
        let sx = stft(&x, spec).unwrap();
        let sy = stft(&y, spec).unwrap();
        // 0.1 s frames → 10 Hz bins, so 100 Hz is bin 10 in both.
        for f in 1..sx.frames() - 1 {
            assert_eq!(argmax(&sx.values.column(f)), 10);
            assert_eq!(argmax(&sy.values.column(f)), 10);
        }
    }

    #[test]
    fn stft_shape_formula() {
        let x = Pcm::new(vec![0.0; 80_000], 16_000).unwrap();
        let s = stft(&x, FrameSpec::ENCODER).unwrap();
        assert_eq!((s.bins(), s.frames()), (201, 498));
    }

    #[test]
    fn stft_too_short() {
        let x = Pcm::new(vec![0.0; 399], 16_000).unwrap();
        assert!(matches!(stft(&x, FrameSpec::ENCODER), Err(DspError::TooShort { len: 399, frame: 400 })));
    }

    #[test]
    fn stft_fractional_frame_rejected() {
        let x = Pcm::new(vec![0.0; 1000], 1001).unwrap();
        assert!(matches!(stft(&x, FrameSpec::ENCODER), Err(DspError::FractionalLength { .. })));
    }

    #[test]
    fn stft_constant_signal_is_dc() {
        let c = 0.3;
        let x = Pcm::new(vec![c; 2000], 16_000).unwrap();
        let s = stft(&x, FrameSpec::ENCODER).unwrap();
        // Periodic Hann: X[0] = cN/2, X[1] = -cN/4, everything above is zero.
        let n = 400.0;
        for f in 0..s.frames() {
            let col = s.values.column(f);
            assert_eq!(argmax(&col), 0);
            assert!((col[0] - (c * n / 2.0).powi(2)).abs() < 1e-8);
            assert!((col[1] - (c * n / 4.0).powi(2)).abs() < 1e-8);
            assert!(col[2..].iter().all(|v| *v < 1e-12));
        }
    }

    #[test]
    fn stft_bin_center_sine_matches_naive_dft() {
        // 1000 Hz is exactly bin 25 at 16 kHz with 400-sample frames.
        let x = tone(1000.0, 0.5, 16_000, 4000);
        let s = stft(&x, FrameSpec::ENCODER).unwrap();
        let w = hann_periodic(400);
        let windowed: Vec<f64> = x.samples[..400].iter().zip(&w).map(|(a, b)| a * b).collect();
        let oracle = dft_power(&windowed);
        let col = s.values.column(0);
        for (a, b) in col.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
        }
        for f in 0..s.frames() {
            assert_eq!(argmax(&s.values.column(f)), 25);
        }
    }

    #[test]
    fn logmel_of_silence_is_floor() {
        let x = Pcm::new(vec![0.0; 4000], 16_000).unwrap();
        let lm = log_mel_spectrogram(&x, &LogMelConfig { policy: FramePolicy::Keep, ..LogMelConfig::encoder() }).unwrap();
        assert!(lm.values.data.iter().all(|v| *v == LOG_FLOOR.ln()));
    }

    #[test]
    fn logmel_shapes_for_presets() {
        let ten = Pcm::new(vec![0.0; 160_000], 16_000).unwrap();
        let lm = log_mel_spectrogram(&ten, &LogMelConfig::padded_1024()).unwrap();
        assert_eq!(lm.values.shape(), (128, 1024));
        let five = Pcm::new(vec![0.0; 80_000], 16_000).unwrap();
        let lm = log_mel_spectrogram(&five, &LogMelConfig::encoder()).unwrap();
        assert_eq!(lm.values.shape(), (128, 496));
    }

    #[test]
    fn logmel_rejects_above_nyquist() {
        let x = Pcm::new(vec![0.0; 4000], 16_000).unwrap();
        let s = stft(&x, FrameSpec::ENCODER).unwrap();
        assert!(matches!(logmel(&s, 128, 0.0, 8001.0), Err(DspError::AboveNyquist { .. })));
    }

    #[test]
    fn logmel_tone_peaks_at_nearest_filter() {
        let x = tone(1000.0, 0.5, 16_000, 8000);
        let cfg = LogMelConfig { policy: FramePolicy::Keep, ..LogMelConfig::encoder() };
        let lm = log_mel_spectrogram(&x, &cfg).unwrap();
        // Oracle: the filter with the largest weight at the tone's bin (25),
        // which is also the one whose peak lies nearest 1 kHz.
        let fb = mel_filterbank(128, 400, 16_000, 0.0, 8000.0);
        let expected = argmax(&fb.column(25));
        let centers = mel_center_frequencies(128, 0.0, 8000.0);
        let nearest = argmax(&centers.iter().map(|c| -(c - 1000.0).abs()).collect::<Vec<_>>());
        assert_eq!(expected, nearest);
        for f in 0..lm.frames() {
            assert_eq!(argmax(&lm.values.column(f)), expected);
        }
    }

    #[test]
    fn filterbank_rows_are_contiguous_and_overlap() {
        let fb = mel_filterbank(40, 512, 16_000, 0.0, 8000.0);
        for m in 0..fb.rows {
            let row = fb.row(m);
            assert!(row.iter().all(|w| *w >= 0.0));
            let nz: Vec<usize> = (0..row.len()).filter(|&b| row[b] > 0.0).collect();
            assert!(!nz.is_empty());
            assert_eq!(nz.len(), nz.last().unwrap() - nz[0] + 1, "row {m} not contiguous");
            if m + 1 < fb.rows {
                let next = fb.row(m + 1);
                assert!((0..row.len()).any(|b| row[b] > 0.0 && next[b] > 0.0), "rows {m},{} disjoint", m + 1);
            }
        }
    }

    #[test]
    fn mfcc_of_constant_column() {
        let c = -2.5;
        let lm = Spectrogram {
            values: Matrix::filled(128, 3, c),
            bin_axis: BinAxis::Mel,
            frame_hop: 0.01,
            log_scaled: true,
            rate: 16_000,
        };
        let m = mfcc(&lm, 40).unwrap();
        assert_eq!(m.shape(), (40, 3));
        for f in 0..3 {
            assert!((m.get(0, f) - c * 128f64.sqrt()).abs() < 1e-9);
            for k in 1..40 {
                assert!(m.get(k, f).abs() < 1e-9);
            }
        }
        assert!(matches!(mfcc(&lm, 129), Err(DspError::TooManyCoefficients { .. })));
    }

    #[test]
    fn mfcc_inverse_round_trip() {
        let mut rng = crate::rng::Rng::new(9);
        let col: Vec<f64> = (0..128).map(|_| rng.uniform_range(-20.0, 5.0)).collect();
        let lm = Spectrogram {
            values: Matrix { rows: 128, cols: 1, data: col.clone() },
            bin_axis: BinAxis::Mel,
            frame_hop: 0.01,
            log_scaled: true,
            rate: 16_000,
        };
        let c = mfcc(&lm, 128).unwrap();
        // Inverse of the orthonormal DCT-II (a DCT-III), written out directly.
        let n: f64 = 128.0;
        for i in 0..128 {
            let mut x = c.get(0, 0) / n.sqrt();
            for k in 1..128 {
                x += (2.0 / n).sqrt() * c.get(k, 0) * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos();
            }
            assert!((x - col[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn psd_sine_peak_and_zeros() {
        let x = tone(250.0, 0.7, 4000, 8000);
        let p = psd(&x, 1.0, 0.5).unwrap();
        assert_eq!(p.len(), 2001);
        assert_eq!(argmax(&p), 250);
        // A single whole-signal periodogram peaks in the same place.
        let single = psd(&x, 2.0, 0.0).unwrap();
        assert_eq!(argmax(&single) / 2, 250);

        let z = Pcm::new(vec![0.0; 8000], 4000).unwrap();
        assert!(psd(&z, 1.0, 0.5).unwrap().iter().all(|v| *v == 0.0));
        let empty = Pcm::new(vec![], 4000).unwrap();
        assert_eq!(psd(&empty, 1.0, 0.5), Err(DspError::Empty));
    }

    #[test]
    fn psd_parseval_on_white_noise() {
        let mut rng = crate::rng::Rng::new(1);
        let samples: Vec<f64> = (0..40_000).map(|_| 0.3 * rng.normal()).collect();
        let power = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
        let x = Pcm::new(samples, 4000).unwrap();
        let total: f64 = psd(&x, 1.0, 0.5).unwrap().iter().sum();
        assert!((total / power - 1.0).abs() < 0.05, "{total} vs {power}");
    }

    #[test]
    fn rms_closed_forms() {
        let c = Pcm::new(vec![-0.4; 1600], 16_000).unwrap();
        assert!(rms_energy(&c, FrameSpec::ENCODER).unwrap().iter().all(|v| (v - 0.4).abs() < 1e-12));
        let z = Pcm::new(vec![0.0; 1600], 16_000).unwrap();
        assert!(rms_energy(&z, FrameSpec::ENCODER).unwrap().iter().all(|v| *v == 0.0));
        // 400-sample frames hold exactly 10 periods of a 400 Hz sine.
        let s = tone(400.0, 0.9, 16_000, 4000);
        for v in rms_energy(&s, FrameSpec::ENCODER).unwrap() {
            assert!((v - 0.9 / 2f64.sqrt()).abs() < 1e-3);
        }
    }

    #[test]
    fn baseline_stack_contract() {
        let x = tone(60.0, 0.5, 4000, 20_000);
        let stack = baseline_features(&x).unwrap();
        assert_eq!(stack.shape(), (4, 128, 496));
        assert!(stack.channels.iter().all(|c| c.shape() == (128, 496)));
        let lm = log_mel_spectrogram(&resample(&x, 16_000).unwrap(), &LogMelConfig::encoder()).unwrap();
        assert_eq!(stack.channels[0], lm.values);
        let psd_ch = &stack.channels[2];
        for r in 0..128 {
            let row = psd_ch.row(r);
            assert!(row.iter().all(|v| *v == row[0]));
        }
    }

    #[test]
    fn interpolation_endpoints() {
        let v = interpolate_linear(&[0.0, 10.0], 11);
        assert_eq!(v.len(), 11);
        assert!((v[3] - 3.0).abs() < 1e-12);
        assert_eq!(interpolate_linear(&[1.0, 2.0, 3.0], 3), vec![1.0, 2.0, 3.0]);
    }
}
