//! Write and read back a per-layer embedding container.
//!
//! `cargo run --release --example containers`

use pcgprobe::embio::{self, ContainerMeta};
use pcgprobe::rng::Rng;

fn main() -> anyhow::Result<()> {
    let meta = ContainerMeta { model_name: "demo".into(), layer: 6, shape: [248, 192] };
    let mut rng = Rng::new(0);
    let values: Vec<Vec<f32>> =
        (0..3).map(|_| (0..248 * 192).map(|_| rng.normal() as f32).collect()).collect();
    let ids = ["1000_AV_000", "1000_AV_001", "1001_PV_000"];
    let records: Vec<(&str, &[f32])> = ids.iter().zip(&values).map(|(id, v)| (*id, v.as_slice())).collect();

    let dir = tempfile::tempdir()?;
    let path = dir.path().join(embio::container_file_name(&meta.model_name, meta.layer));
    embio::write_container(&path, &meta, &records)?;
    let bytes = std::fs::metadata(&path)?.len();
    let back = embio::read_container(&path)?;
    println!("{}: {bytes} bytes, {:?}, {} records", path.display(), back.meta, back.records.len());
    for (r, v) in back.records.iter().zip(&values) {
        let same = r.values.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits());
        println!("  {} bitwise equal: {same}", r.snippet_id);
    }
    match embio::decode(&std::fs::read(&path)?[..40]) {
        Ok(_) => println!("truncated container decoded"),
        Err(e) => println!("truncated container rejected: {e}"),
    }
    Ok(())
}
