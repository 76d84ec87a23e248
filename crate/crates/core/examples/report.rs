//! Summary statistics and report files for layer-wise MAE matrices.
//!
//! `cargo run --release --example report -- [out_dir]`

use pcgprobe::eval::{emit_report, summarize, MaeMatrix};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("pcgprobe_report"), Into::into);
    let splits: Vec<String> = (0..6).map(|s| format!("split{s}")).collect();
    let layers: Vec<u32> = (1..=4).collect();
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|s| layers.iter().map(|&l| 4.0 - 0.8 * (l as f64 - 2.6).abs().recip().min(2.0) + 0.05 * s as f64).collect())
        .collect();
    let model = MaeMatrix::from_rows("demo", splits.clone(), layers, &rows)?;
    let baseline = MaeMatrix::from_rows("baseline", splits, vec![1], &[1.59, 2.23, 1.59, 2.23, 1.59, 2.23].map(|v| vec![v]))?;
    for m in [&model, &baseline] {
        let s = summarize(m)?;
        println!(
            "{}: best layer {}  min mean {:.3}  std {:.3}  min single {:.3}  mean std {:.3}  min std {:.3}",
            m.model_name, s.best_layer, s.min_mean_mae, s.std_at_best_layer, s.min_individual_mae, s.mean_of_stds, s.min_std
        );
    }
    for p in emit_report(&[model, baseline], &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
