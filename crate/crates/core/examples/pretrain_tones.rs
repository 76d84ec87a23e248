//! Masked-autoencoder pretraining of the tiny encoder on synthetic tones.
//!
//! `cargo run --release --example pretrain_tones -- [count] [seconds] [epochs]`

use pcgprobe::encoder::{EncoderConfig, EncoderModel, PretrainConfig};
use pcgprobe::synth::tone_spectrograms;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let count = args.first().map_or(Ok(64), |s| s.parse())?;
    let seconds = args.get(1).map_or(Ok(0.655), |s| s.parse())?;
    let epochs = args.get(2).map_or(Ok(20), |s| s.parse())?;
    let specs = tone_spectrograms(count, seconds, 7);
    println!("{} spectrograms of {} frames", specs.len(), specs[0].frames());
    let mut model = EncoderModel::new(&EncoderConfig::tiny(), 0)?;
    let start = std::time::Instant::now();
    let report = model.pretrain(&specs, &PretrainConfig { epochs, ..PretrainConfig::default() })?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>2}  train loss {l:.4}", i + 1);
    }
    println!(
        "initial {:.4}  final {:.4}  ratio {:.3}  ({:.1} s)",
        report.initial_loss,
        report.final_loss,
        report.final_loss / report.initial_loss,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
