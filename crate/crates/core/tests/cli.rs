mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pcgprobe::cli::{self, RunConfig};
use pcgprobe::corpus::{manifest_to_csv, Recording, SnippetRecord, SplitSpec};
use pcgprobe::dsp::Pcm;
use pcgprobe::embio::{self, ContainerMeta};
use pcgprobe::eval::MaeMatrix;
use pcgprobe::rng::Rng;
use pcgprobe::synth::{hr_embedding, tone, write_recording};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pcgprobe"));
    c.env_remove(cli::JOBS_ENV);
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

/// A corpus of 10 s recordings, each fully annotated with S1 every `period` seconds.
fn uniform_corpus(dir: &Path, subjects: &[&str], period: f64) {
    fs::create_dir_all(dir).unwrap();
    for id in subjects {
        let rec = Recording::from_id(id, Pcm::new(vec![0.0; 40_000], 4000).unwrap());
        write_recording(dir, &rec, &common::beat_annotation(10.0, period)).unwrap();
    }
}

#[test]
fn prepare_windows_a_uniform_recording() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    uniform_corpus(&corpus, &["100_AV"], 0.5);
    let out = dir.path().join("prep");
    let o = run(bin().args(["prepare", "--corpus"]).arg(&corpus).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).starts_with("6 snippets"), "{}", text(&o.stdout));
    let manifest = fs::read_to_string(out.join(cli::MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.lines().count(), 7);
    assert!(manifest.lines().skip(1).all(|l| l.ends_with(",120")));
    assert_eq!(fs::read_dir(out.join(cli::SNIPPET_DIR)).unwrap().count(), 6);
    let recordings = fs::read_to_string(out.join(cli::RECORDINGS_FILE)).unwrap();
    let row: Vec<&str> = recordings.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], ["100_AV", "10.000000"]);
    assert_eq!(row[3], "6");
}

#[test]
fn prepare_warns_on_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().arg("prepare").arg("--corpus").arg(dir.path()).arg("--out").arg(dir.path().join("o")));
    assert!(o.status.success());
    assert!(text(&o.stdout).starts_with("0 snippets"));
    assert!(text(&o.stderr).contains("warning"));
}

#[test]
fn prepare_lists_unpaired_files() {
    let dir = tempfile::tempdir().unwrap();
    uniform_corpus(dir.path(), &["1_AV"], 0.5);
    fs::write(dir.path().join("2_PV.wav"), pcgprobe::wav::encode(&tone(100.0, 0.1, 4000, 6.0))).unwrap();
    fs::write(dir.path().join("3_MV.tsv"), "").unwrap();
    let out = dir.path().join("o");
    let o = run(bin().arg("prepare").arg("--corpus").arg(dir.path()).arg("--out").arg(&out));
    assert!(!o.status.success());
    let err = text(&o.stderr);
    assert!(err.contains("2_PV.wav") && err.contains("3_MV.tsv"), "{err}");
    assert!(!out.join(cli::MANIFEST_FILE).exists());
}

fn manifest(subjects: usize, per_subject: usize) -> Vec<SnippetRecord> {
    let mut rng = Rng::new(2);
    (0..subjects)
        .flat_map(|s| (0..per_subject).map(move |k| (s, k)))
        .map(|(s, k)| SnippetRecord {
            snippet_id: format!("{s}_AV_{k:03}"),
            recording_id: format!("{s}_AV"),
            subject_id: s.to_string(),
            start_s: k as f64,
            hr_bpm: 40 + rng.below(141) as u32,
        })
        .collect()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).map(|r| r.map(|e| e.unwrap().path()).collect()).unwrap_or_default();
    v.sort();
    v
}

#[test]
fn split_writes_six_verified_files_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.csv");
    fs::write(&m, manifest_to_csv(&manifest(30, 3))).unwrap();
    let split = |out: &Path| run(bin().args(["split", "--seeds", "0..5", "--manifest"]).arg(&m).arg("--out").arg(out));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(split(&a).status.success());
    assert!(split(&b).status.success());
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 6);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    let spec = SplitSpec::from_csv(&fs::read_to_string(a.join("split_3.csv")).unwrap(), 3, "split_3.csv").unwrap();
    assert_eq!(spec.assignment.len(), 30);
}

#[test]
fn split_verification_failure_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.csv");
    fs::write(&m, manifest_to_csv(&manifest(30, 3))).unwrap();
    let out = dir.path().join("splits");
    let o = run(bin().args(["split", "--inject-split-failure", "4", "--manifest"]).arg(&m).arg("--out").arg(&out));
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("split seed 4"), "{}", text(&o.stderr));
    assert!(files(&out).is_empty());
}

#[test]
fn split_rejects_fewer_than_three_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.csv");
    fs::write(&m, manifest_to_csv(&manifest(2, 4))).unwrap();
    let o = run(bin().arg("split").arg("--manifest").arg(&m).arg("--out").arg(dir.path().join("s")));
    assert!(!o.status.success());
}

#[test]
fn missing_upstream_artifacts_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let absent = dir.path().join("nowhere.csv");
    for sub in ["split", "pretrain", "embed", "probe", "baseline"] {
        let o = run(bin().arg(sub).arg("--manifest").arg(&absent).arg("--out").arg(dir.path().join("o")));
        assert!(!o.status.success(), "{sub}");
        assert!(text(&o.stderr).contains("nowhere.csv"), "{sub}: {}", text(&o.stderr));
    }
    let o = run(bin().arg("report").arg("--results").arg(dir.path().join("results")).arg("--out").arg(dir.path()));
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("results"));
}

#[test]
fn config_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seeds = 0..2\nlearning_rate = 1\n").unwrap();
    let o = run(bin().arg("--config").arg(&cfg).arg("report"));
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("unknown config key \"learning_rate\""), "{}", text(&o.stderr));

    let m = dir.path().join("manifest.csv");
    fs::write(&m, manifest_to_csv(&manifest(12, 2))).unwrap();
    fs::write(&cfg, format!("seeds = 0..2\nmanifest = {}\n", m.display())).unwrap();
    let out = dir.path().join("s");
    let o = run(bin().arg("--config").arg(&cfg).arg("split").arg("--out").arg(&out));
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(files(&out).len(), 3);
    let o = run(bin().arg("--config").arg(&cfg).args(["--set", "seeds=7"]).arg("split").arg("--out").arg(&out));
    assert!(o.status.success());
    assert!(out.join("split_7.csv").is_file());
}

#[test]
fn embed_writes_one_container_per_tiny_layer() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    uniform_corpus(&corpus, &["1_AV", "2_PV"], 0.8);
    let prep = dir.path().join("prep");
    let mut cfg = RunConfig { corpus: Some(corpus), out: Some(prep.clone()), ..RunConfig::default() };
    let s = cli::cmd_prepare(&cfg).unwrap();
    assert_eq!(s.snippets, 10);
    cfg.manifest = Some(s.manifest.clone());
    cfg.snippets = Some(prep.join(cli::SNIPPET_DIR));
    cfg.out = Some(dir.path().join("emb"));
    let paths = cli::cmd_embed(&cfg).unwrap();
    assert_eq!(paths.len(), 4);
    for (l, p) in paths.iter().enumerate() {
        let c = embio::read_container(p).unwrap();
        assert_eq!(c.meta.layer, l as u32 + 1);
        assert_eq!(c.meta.shape, [248, 192]);
        assert_eq!(c.records.len(), 10);
        assert_eq!(p.file_name().unwrap().to_string_lossy(), format!("tiny_layer{:02}.pemb", l + 1));
    }
}

/// Manifest, six splits and twelve 32×32 layer containers whose row 0 encodes
/// the label.
fn synthetic_probe_inputs(root: &Path) -> RunConfig {
    let records = manifest(20, 1);
    let m = root.join("manifest.csv");
    fs::write(&m, manifest_to_csv(&records)).unwrap();
    let emb = root.join("emb");
    fs::create_dir_all(&emb).unwrap();
    let mut rng = Rng::new(4);
    for layer in 1..=12 {
        let values: Vec<Vec<f32>> =
            records.iter().map(|r| hr_embedding(r.hr_bpm, 32, 32, 0.5, 1.0, &mut rng).into_data()).collect();
        let recs: Vec<(&str, &[f32])> =
            records.iter().zip(&values).map(|(r, v)| (r.snippet_id.as_str(), v.as_slice())).collect();
        let meta = ContainerMeta { model_name: "toy".into(), layer, shape: [32, 32] };
        embio::write_container(&emb.join(embio::container_file_name("toy", layer)), &meta, &recs).unwrap();
    }
    let mut cfg = RunConfig {
        manifest: Some(m),
        splits: Some(root.join("splits")),
        embeddings: Some(emb),
        results: Some(root.join("results")),
        model: "toy".into(),
        epochs: 1,
        batch: 8,
        jobs: Some(3),
        ..RunConfig::default()
    };
    cfg.out = cfg.splits.clone();
    cli::cmd_split(&cfg, None).unwrap();
    cfg.out = cfg.results.clone();
    cfg
}

#[test]
fn probe_covers_every_layer_and_split_then_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_probe_inputs(dir.path());
    let matrix = cli::cmd_probe(&cfg).unwrap();
    assert_eq!(matrix.split_ids.len(), 6);
    assert_eq!(matrix.layer_ids, (1..=12).collect::<Vec<_>>());
    assert!(matrix.is_complete());
    let results = cfg.results.clone().unwrap();
    let reports = files(&results.join("reports"));
    assert_eq!(reports.len(), 72);
    assert_eq!(files(&results.join("checkpoints")).len(), 72);
    let job: cli::ProbeJobResult = serde_json::from_str(&fs::read_to_string(&reports[0]).unwrap()).unwrap();
    assert_eq!(job.report.train_loss.len(), 1);
    assert!(results.join(job.report.checkpoint.unwrap()).is_file());
    let stored: MaeMatrix =
        serde_json::from_str(&fs::read_to_string(results.join("mae_matrix_toy.json")).unwrap()).unwrap();
    assert_eq!(stored, matrix);

    cfg.out = Some(dir.path().join("report"));
    let written = cli::cmd_report(&cfg).unwrap();
    let names: Vec<String> = written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["mae_matrix_toy.csv", "layer_curves_toy.csv", "summary.csv"]);
    let summary = fs::read_to_string(dir.path().join("report/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("model,best_layer,min_mean_mae,std_at_best_layer,min_individual_mae,mean_of_stds,min_std"));
    assert!(lines[1].starts_with("toy,"));
}

#[test]
fn probe_results_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_probe_inputs(dir.path());
    cfg.layers = Some(vec![3]);
    cfg.seeds = vec![0, 1, 2];
    cfg.jobs = Some(1);
    cfg.out = Some(dir.path().join("serial"));
    let serial = cli::cmd_probe(&cfg).unwrap();
    cfg.jobs = Some(3);
    cfg.out = Some(dir.path().join("parallel"));
    let parallel = cli::cmd_probe(&cfg).unwrap();
    assert_eq!(serial, parallel);
    for name in ["reports/toy_layer03_split1.json", "mae_matrix_toy.json"] {
        assert_eq!(fs::read(dir.path().join("serial").join(name)).unwrap(), fs::read(dir.path().join("parallel").join(name)).unwrap());
    }
}

#[test]
fn jobs_fall_back_to_environment() {
    let cfg = RunConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().env(cli::JOBS_ENV, "0x").arg("report").arg("--results").arg(dir.path()));
    assert!(!o.status.success());
    assert!(text(&o.stderr).to_lowercase().contains("jobs"), "{}", text(&o.stderr));
    assert!(cfg.resolved_jobs() >= 1);
}
