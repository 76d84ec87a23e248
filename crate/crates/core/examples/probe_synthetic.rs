//! Train the heart-rate probe on synthetic embeddings whose first row encodes
//! the rate linearly.
//!
//! `cargo run --release --example probe_synthetic -- [train] [epochs] [background]`

use pcgprobe::probe::{train_probe, LabeledSet, ProbeTrainConfig};
use pcgprobe::rng::Rng;
use pcgprobe::synth::{hr_embedding, uniform_labels};

fn set(count: usize, background: f64, rng: &mut Rng) -> anyhow::Result<LabeledSet> {
    let labels = uniform_labels(count, 40, 180, rng);
    let inputs = labels.iter().map(|&hr| hr_embedding(hr, 32, 32, 0.5, background, rng)).collect();
    Ok(LabeledSet::new(inputs, labels)?)
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n_train = args.first().map_or(Ok(2000), |s| s.parse())?;
    let epochs = args.get(1).map_or(Ok(50), |s| s.parse())?;
    let background = args.get(2).map_or(Ok(0.0), |s| s.parse())?;
    let mut rng = Rng::new(11);
    let (train, val, test) = (set(n_train, background, &mut rng)?, set(n_train / 8, background, &mut rng)?, set(n_train / 8, background, &mut rng)?);
    let start = std::time::Instant::now();
    let mut probe = train_probe(&train, &val, &ProbeTrainConfig { epochs, ..Default::default() })?;
    for (i, (l, m)) in probe.report.train_loss.iter().zip(&probe.report.val_mae).enumerate() {
        println!("epoch {:>2}  loss {l:.4}  val MAE {m:.3}", i + 1);
    }
    let mae = probe.evaluate(&test)?;
    println!(
        "best epoch {}  test MAE {mae:.3} bpm  ({:.1} s)",
        probe.report.best_epoch,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
