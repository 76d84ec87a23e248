//! Average the integer predictions of several models.
//!
//! `cargo run --release --example ensemble`

use pcgprobe::eval::{ensemble, mae_bpm};

fn main() -> anyhow::Result<()> {
    let truth = vec![72, 88, 101, 64, 130];
    let encoder = vec![70, 91, 99, 66, 127];
    let baseline = vec![75, 86, 104, 63, 133];
    let joint = ensemble(&[encoder.clone(), baseline.clone()])?;
    println!("encoder  {encoder:?}  MAE {:.2}", mae_bpm(&encoder, &truth)?);
    println!("baseline {baseline:?}  MAE {:.2}", mae_bpm(&baseline, &truth)?);
    println!("ensemble {joint:?}  MAE {:.2}", mae_bpm(&joint, &truth)?);
    Ok(())
}
