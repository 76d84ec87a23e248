//! Synthetic data generators used by the examples, tests and acceptance suite:
//! annotated heart-sound recordings, tone spectrograms, click trains and
//! heart-rate-bearing embedding tensors.

use std::fs;
use std::path::Path;

use crate::corpus::{Annotation, Event, HeartState, Recording, HR_MAX, HR_MIN};
use crate::dsp::{self, LogMelConfig, Pcm, Spectrogram};
use crate::nn::Tensor;
use crate::rng::Rng;
use crate::wav;

/// Shape of a synthetic phonocardiogram.
#[derive(Debug, Clone, Copy)]
pub struct PcgParams {
    pub rate: u32,
    pub duration: f64,
    pub hr_bpm: f64,
    /// Seconds of unannotated audio before the labeled region.
    pub lead_in: f64,
    /// Seconds of unannotated audio after the labeled region.
    pub lead_out: f64,
    /// Relative beat-to-beat period jitter.
    pub jitter: f64,
    pub noise: f64,
}

impl Default for PcgParams {
    fn default() -> Self {
        Self {
            rate: 4000,
            duration: 10.0,
            hr_bpm: 80.0,
            lead_in: 0.0,
            lead_out: 0.0,
            jitter: 0.0,
            noise: 0.01,
        }
    }
}

fn burst(audio: &mut [f64], rate: u32, at: f64, freq: f64, amp: f64, len: f64) {
    let start = (at * rate as f64).round() as usize;
    let n = (len * rate as f64) as usize;
    for i in 0..n {
        let Some(slot) = audio.get_mut(start + i) else { break };
        let t = i as f64 / rate as f64;
        let env = (std::f64::consts::PI * t / len).sin();
        *slot += amp * env * (2.0 * std::f64::consts::PI * freq * t).sin();
    }
}

/// Heart-sound-like audio with S1/S2 bursts and a matching four-state annotation.
pub fn synth_pcg(recording_id: &str, p: &PcgParams, rng: &mut Rng) -> (Recording, Annotation) {
    let n = (p.duration * p.rate as f64).round() as usize;
    let mut audio: Vec<f64> = (0..n).map(|_| p.noise * rng.normal()).collect();
    let mut events = Vec::new();
    let end = p.duration - p.lead_out;
    let mut t = p.lead_in;
    loop {
        let period = 60.0 / p.hr_bpm * (1.0 + p.jitter * (2.0 * rng.uniform() - 1.0));
        if t + period > end + 1e-9 {
            break;
        }
        let s1_len = 0.1 * period.min(1.0);
        let s2_on = t + 0.35 * period;
        let s2_len = 0.08 * period.min(1.0);
        events.push(Event { onset: t, offset: t + s1_len, state: HeartState::S1 });
        events.push(Event { onset: t + s1_len, offset: s2_on, state: HeartState::Systole });
        events.push(Event { onset: s2_on, offset: s2_on + s2_len, state: HeartState::S2 });
        events.push(Event { onset: s2_on + s2_len, offset: t + period, state: HeartState::Diastole });
        burst(&mut audio, p.rate, t, 55.0, 0.6, s1_len);
        burst(&mut audio, p.rate, s2_on, 85.0, 0.35, s2_len);
        t += period;
    }
    for s in &mut audio {
        *s = s.clamp(-1.0, 1.0);
    }
    let recording = Recording::from_id(recording_id, Pcm { samples: audio, rate: p.rate });
    (recording, Annotation { events })
}

/// Write `<id>.wav` and `<id>.tsv` into `dir`.
pub fn write_recording(dir: &Path, recording: &Recording, annotation: &Annotation) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    wav::write(&dir.join(format!("{}.wav", recording.recording_id)), &recording.audio)
        .map_err(std::io::Error::other)?;
    fs::write(dir.join(format!("{}.tsv", recording.recording_id)), annotation.to_tsv())
}

/// A small corpus: `subjects` subjects, one recording each, heart rates spread
/// over 60-120 bpm.
pub fn write_synthetic_corpus(dir: &Path, subjects: usize, duration: f64, seed: u64) -> std::io::Result<()> {
    let mut rng = Rng::new(seed);
    for s in 0..subjects {
        let hr = 60.0 + 60.0 * rng.uniform();
        let params = PcgParams { duration, hr_bpm: hr, jitter: 0.02, ..PcgParams::default() };
        let site = ["AV", "PV", "TV", "MV"][s % 4];
        let (rec, ann) = synth_pcg(&format!("{}_{site}", 1000 + s), &params, &mut rng);
        write_recording(dir, &rec, &ann)?;
    }
    Ok(())
}

/// Pure tone at `freq` Hz.
pub fn tone(freq: f64, amp: f64, rate: u32, seconds: f64) -> Pcm {
    let n = (seconds * rate as f64).round() as usize;
    Pcm {
        samples: (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect(),
        rate,
    }
}

/// Log-mel spectrograms of random tones at 16 kHz, truncated to whole patches.
pub fn tone_spectrograms(count: usize, seconds: f64, seed: u64) -> Vec<Spectrogram> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let freq = 200.0 + 3000.0 * rng.uniform();
            let amp = 0.1 + 0.8 * rng.uniform();
            let mut pcm = tone(freq, amp, dsp::ENCODER_RATE, seconds);
            for s in &mut pcm.samples {
                *s += 0.001 * rng.normal();
            }
            dsp::log_mel_spectrogram(&pcm, &LogMelConfig::encoder()).expect("tone spectrogram")
        })
        .collect()
}

/// Silence with unit clicks at an exact heart rate.
pub fn click_train(bpm: f64, rate: u32, seconds: f64, offset: f64) -> Pcm {
    let n = (seconds * rate as f64).round() as usize;
    let mut samples = vec![0.0; n];
    let period = 60.0 / bpm;
    let mut t = offset;
    while t < seconds {
        let i = (t * rate as f64).round() as usize;
        if i < n {
            samples[i] = 0.9;
        }
        t += period;
    }
    Pcm { samples, rate }
}

/// Embedding-like `[1, rows, cols]` tensors whose row-0 mean encodes the heart
/// rate linearly, with Gaussian noise of `noise_bpm` (in bpm units) on that mean.
/// Other rows are Gaussian noise of standard deviation `background`.
pub fn hr_embedding(hr: u32, rows: usize, cols: usize, noise_bpm: f64, background: f64, rng: &mut Rng) -> Tensor<f32> {
    let scale = 1.0 / 35.0;
    let center = (HR_MIN + HR_MAX) as f64 / 2.0;
    let per_entry = noise_bpm * scale * (cols as f64).sqrt();
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..cols {
        data.push(((hr as f64 - center) * scale + per_entry * rng.normal()) as f32);
    }
    for _ in cols..rows * cols {
        data.push((background * rng.normal()) as f32);
    }
    Tensor::from_vec(vec![1, rows, cols], data).expect("shape matches data")
}

/// Heart-rate labels drawn uniformly from `[lo, hi]`.
pub fn uniform_labels(count: usize, lo: u32, hi: u32, rng: &mut Rng) -> Vec<u32> {
    (0..count).map(|_| lo + rng.below((hi - lo + 1) as u64) as u32).collect()
}
