//! Cut a synthetic annotated recording into labeled 5 s snippets.
//!
//! `cargo run --release --example windowing -- [bpm] [seconds]`

use pcgprobe::corpus::{average_hr, hr_histogram, window_snippets_with_stats};
use pcgprobe::rng::Rng;
use pcgprobe::synth::{synth_pcg, PcgParams};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let bpm: f64 = args.first().map_or(Ok(84.0), |s| s.parse())?;
    let duration: f64 = args.get(1).map_or(Ok(20.0), |s| s.parse())?;
    let params = PcgParams { hr_bpm: bpm, duration, lead_in: 1.5, lead_out: 1.0, jitter: 0.03, ..PcgParams::default() };
    let (recording, annotation) = synth_pcg("2530_AV", &params, &mut Rng::new(7));

    let region = annotation.longest_labeled_region().unwrap_or((0.0, 0.0));
    let onsets: Vec<f64> = annotation.s1_onsets().collect();
    println!(
        "{}: subject {} site {}, labeled {:.2}-{:.2} s, {} S1 onsets, overall {} bpm",
        recording.recording_id,
        recording.subject_id,
        recording.auscultation_site,
        region.0,
        region.1,
        onsets.len(),
        average_hr(&onsets)?
    );

    let (snippets, stats) = window_snippets_with_stats(&recording, &annotation);
    println!("{stats:?}");
    for s in &snippets {
        println!("  {}  start {:>5.2} s  {} bpm", s.snippet_id, s.start, s.hr_label);
    }
    let hist = hr_histogram(&snippets);
    println!("{} labels, {} at {} bpm", hist.total(), hist.count(bpm.round() as u32), bpm.round());
    Ok(())
}
