use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcgprobe::cli::{self, RunConfig};

#[derive(Parser)]
#[command(name = "pcgprobe", version, about = "Layer-wise heart-rate probing of audio representations")]
struct Cli {
    /// key=value settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for probe jobs.
    #[arg(long, global = true, env = cli::JOBS_ENV)]
    jobs: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extra key=value settings, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Paths {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    snippets: Option<PathBuf>,
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args, Default)]
struct Training {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    /// `all`, a list `1,2,3` or a range `1..12`.
    #[arg(long)]
    layers: Option<String>,
    /// Split seeds, `0..5` or a list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Window the corpus into labeled 5 s snippets.
    Prepare {
        #[command(flatten)]
        paths: Paths,
    },
    /// Write subject-disjoint train/val/test splits, one per seed.
    Split {
        #[command(flatten)]
        paths: Paths,
        #[arg(long)]
        seeds: Option<String>,
        /// Unassign one subject of this seed's split before verification.
        #[arg(long, hide = true)]
        inject_split_failure: Option<u64>,
    },
    /// Masked-autoencoder pretraining of the encoder.
    Pretrain {
        #[command(flatten)]
        paths: Paths,
        #[command(flatten)]
        training: Training,
    },
    /// Export per-layer encoder outputs as containers.
    Embed {
        #[command(flatten)]
        paths: Paths,
        #[command(flatten)]
        training: Training,
    },
    /// Train one probe per (layer, split).
    Probe {
        #[command(flatten)]
        paths: Paths,
        #[command(flatten)]
        training: Training,
    },
    /// Train the probe on hand-crafted features.
    Baseline {
        #[command(flatten)]
        paths: Paths,
        #[command(flatten)]
        training: Training,
    },
    /// Emit MAE matrices, layer curves and the summary table.
    Report {
        #[command(flatten)]
        paths: Paths,
    },
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

fn path_overrides(p: &Paths, out: &mut Vec<(&'static str, String)>) {
    let d = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
    push(out, "corpus", &d(&p.corpus));
    push(out, "out", &d(&p.out));
    push(out, "manifest", &d(&p.manifest));
    push(out, "snippets", &d(&p.snippets));
    push(out, "splits", &d(&p.splits));
    push(out, "embeddings", &d(&p.embeddings));
    push(out, "checkpoint", &d(&p.checkpoint));
    push(out, "results", &d(&p.results));
}

fn training_overrides(t: &Training, out: &mut Vec<(&'static str, String)>) {
    push(out, "model", &t.model);
    push(out, "preset", &t.preset);
    push(out, "layers", &t.layers);
    push(out, "seeds", &t.seeds);
    push(out, "epochs", &t.epochs);
    push(out, "batch", &t.batch);
    push(out, "lr", &t.lr);
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut overrides = Vec::new();
    push(&mut overrides, "jobs", &cli.jobs);
    push(&mut overrides, "seed", &cli.seed);
    match &cli.command {
        Command::Prepare { paths } | Command::Report { paths } => path_overrides(paths, &mut overrides),
        Command::Split { paths, seeds, .. } => {
            path_overrides(paths, &mut overrides);
            push(&mut overrides, "seeds", seeds);
        }
        Command::Pretrain { paths, training }
        | Command::Embed { paths, training }
        | Command::Probe { paths, training }
        | Command::Baseline { paths, training } => {
            path_overrides(paths, &mut overrides);
            training_overrides(training, &mut overrides);
        }
    }
    for (k, v) in overrides {
        cfg.set(k, &v)?;
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k, v)?;
    }

    match cli.command {
        Command::Prepare { .. } => {
            let s = cli::cmd_prepare(&cfg)?;
            println!("{} snippets from {} recordings", s.snippets, s.recordings.len());
        }
        Command::Split { inject_split_failure, .. } => {
            let hook = move |spec: &mut pcgprobe::corpus::SplitSpec| {
                if Some(spec.seed) == inject_split_failure {
                    let first = spec.assignment.keys().next().cloned();
                    if let Some(k) = first {
                        spec.assignment.remove(&k);
                    }
                }
            };
            for p in cli::cmd_split(&cfg, Some(&hook))? {
                println!("{}", p.display());
            }
        }
        Command::Pretrain { .. } => {
            let r = cli::cmd_pretrain(&cfg)?;
            println!("reconstruction loss {:.6} -> {:.6}", r.initial_loss, r.final_loss);
        }
        Command::Embed { .. } => {
            for p in cli::cmd_embed(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Probe { .. } | Command::Baseline { .. } => {
            let m = if matches!(cli.command, Command::Probe { .. }) { cli::cmd_probe(&cfg)? } else { cli::cmd_baseline(&cfg)? };
            let st = pcgprobe::eval::summarize(&m)?;
            println!("{}: best layer {} mean MAE {:.3} bpm", m.model_name, st.best_layer, st.min_mean_mae);
        }
        Command::Report { .. } => {
            for p in cli::cmd_report(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
