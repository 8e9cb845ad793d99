//! Splits a feature map into dense-depth descriptors and root-square normalizes them.

use ddr_vlad::ddr::{ddr_split, root_square_normalize, DdrConfig};
use ddr_vlad::tensor::FeatureMap;

fn main() -> anyhow::Result<()> {
    let (h, w, d) = (8, 8, 1280);
    let data: Vec<f32> = (0..h * w * d).map(|i| (i % 17) as f32).collect();
    let fm = FeatureMap::new(h, w, d, data)?;

    for s in [1280, 256, 128, 64] {
        let ds = ddr_split(&fm, &DdrConfig::new(s, false)?)?;
        println!(
            "split {s:>4}: {:>5} descriptors of dim {}",
            ds.len(),
            ds.dim()
        );
    }

    let ds = root_square_normalize(ddr_split(&fm, &DdrConfig::default())?);
    let norm: f64 = ds.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
    let cell = ds.origin().map(|o| o[0]);
    println!("first descriptor: cell {cell:?}, L2 norm after root-square {norm:.6}");
    Ok(())
}
