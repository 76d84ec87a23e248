//! Train the baseline probe on click trains at random rates.
//!
//! `cargo run --release --example baseline_clicks -- [train] [epochs]`

use pcgprobe::dsp::{baseline_features, FeatureStack};
use pcgprobe::probe::{train_baseline, LabeledSet, ProbeTrainConfig};
use pcgprobe::rng::Rng;
use pcgprobe::synth::click_train;

fn features(count: usize, rng: &mut Rng) -> anyhow::Result<(Vec<FeatureStack>, Vec<u32>)> {
    let mut feats = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let bpm = 60 + rng.below(81) as u32;
        let period = 60.0 / bpm as f64;
        feats.push(baseline_features(&click_train(bpm as f64, 4000, 5.0, rng.uniform_range(0.0, period)))?);
        labels.push(bpm);
    }
    Ok((feats, labels))
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(Ok(24), |s| s.parse())?;
    let epochs: usize = args.get(1).map_or(Ok(6), |s| s.parse())?;
    let mut rng = Rng::new(5);
    let (train, train_y) = features(n, &mut rng)?;
    let (val, val_y) = features(n / 4 + 1, &mut rng)?;
    let (test, test_y) = features(n / 4 + 1, &mut rng)?;
    println!("feature stack {:?}", train[0].shape());
    let start = std::time::Instant::now();
    let mut probe = train_baseline(&train, train_y, &val, val_y, &ProbeTrainConfig { epochs, ..Default::default() })?;
    let mae = probe.evaluate(&LabeledSet::from_features(&test, test_y)?)?;
    println!("best epoch {}  test MAE {mae:.2} bpm  ({:.0} s)", probe.report.best_epoch, start.elapsed().as_secs_f64());
    Ok(())
}
