//! Log-mel, MFCC and the four-channel baseline feature stack of a click train.
//!
//! `cargo run --release --example features -- [bpm]`

use pcgprobe::dsp::{self, LogMelConfig};
use pcgprobe::synth::click_train;

fn main() -> anyhow::Result<()> {
    let bpm: f64 = std::env::args().nth(1).map_or(Ok(72.0), |s| s.parse())?;
    let pcm = click_train(bpm, 4000, 5.0, 0.1);
    println!("{} samples at {} Hz ({:.2} s)", pcm.len(), pcm.rate, pcm.duration());

    let audio = dsp::resample(&pcm, dsp::ENCODER_RATE)?;
    let lm = dsp::log_mel_spectrogram(&audio, &LogMelConfig::encoder())?;
    println!("log-mel: {} mels x {} frames", lm.bins(), lm.frames());

    let mfcc = dsp::mfcc(&lm, 40)?;
    println!("mfcc: {:?}", mfcc.shape());

    let stack = dsp::baseline_features(&pcm)?;
    println!("baseline stack {:?}: {}", stack.shape(), stack.channel_names.join(", "));

    let rms = dsp::rms_energy(&audio, dsp::FrameSpec::ENCODER)?;
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    let loud = rms.iter().filter(|&&v| v > 0.5 * peak).count();
    println!("frames above half the peak RMS: {loud} of {}", rms.len());
    Ok(())
}
