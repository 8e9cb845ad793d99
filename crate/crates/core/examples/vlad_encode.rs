//! Encodes one synthetic image with plain VLAD and with locVLAD and compares them.

use ddr_vlad::codebook::{kmeans_fit, KMeansParams};
use ddr_vlad::ddr::{DdrConfig, DescriptorSet};
use ddr_vlad::synthetic::SyntheticSpec;
use ddr_vlad::vlad::{vlad_trace, Encoder, LocVladConfig};

fn main() -> anyhow::Result<()> {
    let images = SyntheticSpec {
        classes: 4,
        per_class: 2,
        ..Default::default()
    }
    .generate()?;
    let ddr = DdrConfig::new(64, true)?;

    let sets = images
        .iter()
        .map(|img| ddr.describe(&img.map))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = DescriptorSet::concat(&sets)?;
    let codebook = kmeans_fit(
        &pool,
        &KMeansParams {
            k: 16,
            ..Default::default()
        },
    )?
    .codebook;

    let trace = vlad_trace(&sets[0], &codebook, &Default::default())?;
    println!(
        "VLAD length {} (K={} x d={}), sigma guard fired: {}",
        trace.output.values.len(),
        codebook.k(),
        codebook.dim(),
        trace.sigma_guard_fired
    );

    let plain = Encoder::new(&codebook, ddr);
    let local = Encoder::new(&codebook, ddr).with_locvlad(LocVladConfig::new(0.75, true)?);
    let q = &images[0].map;
    let a = plain.encode(q, true)?;
    let b = local.encode(q, true)?;
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    println!("cosine(VLAD, locVLAD) for the query = {dot:.4}");
    let db = local.encode(q, false)?;
    println!(
        "locVLAD applied to a database image leaves it unchanged: {}",
        db.values == a.values
    );
    Ok(())
}
