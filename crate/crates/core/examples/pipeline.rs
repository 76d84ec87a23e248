//! The full command sequence on a small synthetic corpus: prepare, split,
//! pretrain, embed, probe, baseline and report.
//!
//! `cargo run --release --example pipeline -- [work_dir] [subjects]`

use pcgprobe::cli::{self, RunConfig};
use pcgprobe::synth::write_synthetic_corpus;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let work = args.first().map_or_else(|| std::env::temp_dir().join("pcgprobe_pipeline"), Into::into);
    let subjects: usize = args.get(1).map_or(Ok(8), |s| s.parse())?;
    let corpus = work.join("corpus");
    std::fs::create_dir_all(&corpus)?;
    write_synthetic_corpus(&corpus, subjects, 9.0, 1)?;

    let prepared = work.join("prepared");
    let mut cfg = RunConfig {
        corpus: Some(corpus),
        manifest: Some(prepared.join(cli::MANIFEST_FILE)),
        snippets: Some(prepared.join(cli::SNIPPET_DIR)),
        splits: Some(work.join("splits")),
        embeddings: Some(work.join("embeddings")),
        checkpoint: Some(work.join("pretrain").join(cli::ENCODER_CHECKPOINT)),
        results: Some(work.join("results")),
        seeds: vec![0, 1],
        epochs: 2,
        pretrain_epochs: 2,
        layers: Some(vec![1, 4]),
        ..RunConfig::default()
    };

    cfg.out = Some(prepared);
    println!("prepare: {} snippets", cli::cmd_prepare(&cfg)?.snippets);
    cfg.out = cfg.splits.clone();
    println!("split: {} files", cli::cmd_split(&cfg, None)?.len());
    cfg.out = Some(work.join("pretrain"));
    let pre = cli::cmd_pretrain(&cfg)?;
    println!("pretrain: loss {:.4} -> {:.4}", pre.initial_loss, pre.final_loss);
    cfg.out = cfg.embeddings.clone();
    println!("embed: {} containers", cli::cmd_embed(&cfg)?.len());
    cfg.out = cfg.results.clone();
    let probe = cli::cmd_probe(&cfg)?;
    println!("probe: {} splits x {} layers", probe.split_ids.len(), probe.layer_ids.len());
    cli::cmd_baseline(&cfg)?;
    for p in cli::cmd_report(&cfg)? {
        println!("report: {}", p.display());
    }
    Ok(())
}
