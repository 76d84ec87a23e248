//! Per-layer token sequences of the audio encoder for one 5 s snippet.
//!
//! `cargo run --release --example encode_layers -- [tiny|vitb]`

use pcgprobe::dsp::LogMelConfig;
use pcgprobe::encoder::{encoder_input, mask_count, EncoderConfig, EncoderModel};
use pcgprobe::rng::Rng;
use pcgprobe::synth::{synth_pcg, PcgParams};

fn main() -> anyhow::Result<()> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "tiny".into());
    let cfg = EncoderConfig::preset(&preset).ok_or_else(|| anyhow::anyhow!("unknown preset {preset}"))?;
    let (rec, _) = synth_pcg("7_MV", &PcgParams { duration: 5.0, ..PcgParams::default() }, &mut Rng::new(2));
    let spec = encoder_input(&rec.audio, &LogMelConfig::encoder())?;
    println!("input: {} mels x {} frames", spec.bins(), spec.frames());

    let mut model = EncoderModel::new(&cfg, 0)?;
    println!("{preset}: {} encoder parameters", model.encoder.param_count(&model.store));
    let out = model.encode_layers(std::slice::from_ref(&spec))?;
    for (l, seq) in out[0].layers.iter().enumerate() {
        println!("  layer {:>2}: [{} x {}]", l + 1, seq.len(), seq.dim());
    }
    let tokens = out[0].layers[0].len();
    println!("pooled width {}, {} of {tokens} tokens masked in pretraining", out[0].pooled.len(), mask_count(tokens, cfg.mask_ratio));
    Ok(())
}
