//! Subject-disjoint 80/10/10 splits for several seeds.
//!
//! `cargo run --release --example splits -- [subjects]`

use pcgprobe::corpus::{make_splits, SnippetRecord, SplitSet};
use pcgprobe::rng::Rng;

fn main() -> anyhow::Result<()> {
    let subjects: usize = std::env::args().nth(1).map_or(Ok(200), |s| s.parse())?;
    let mut rng = Rng::new(1);
    let mut manifest = Vec::new();
    for s in 0..subjects {
        for k in 0..1 + rng.below(12) as usize {
            manifest.push(SnippetRecord {
                snippet_id: format!("{s}_AV_{k:03}"),
                recording_id: format!("{s}_AV"),
                subject_id: s.to_string(),
                start_s: k as f64,
                hr_bpm: 80,
            });
        }
    }
    let counts = pcgprobe::corpus::subject_counts(&manifest);
    println!("{} subjects, {} snippets", counts.len(), manifest.len());
    for seed in 0..6 {
        let spec = make_splits(&counts, seed)?;
        spec.verify(&manifest)?;
        let share = |set| 100.0 * spec.subjects(set).len() as f64 / counts.len() as f64;
        println!(
            "seed {seed}: train {:.1}%  val {:.1}%  test {:.1}%",
            share(SplitSet::Train),
            share(SplitSet::Val),
            share(SplitSet::Test)
        );
    }
    Ok(())
}
