//! K-means++ seeding followed by Lloyd iterations on three Gaussian blobs.

use ddr_vlad::codebook::{kmeans_fit, KMeansParams};
use ddr_vlad::ddr::DescriptorSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> anyhow::Result<()> {
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let noise = Normal::new(0.0, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rows = Vec::new();
    for c in &centers {
        for _ in 0..300 {
            rows.push(vec![
                c[0] + noise.sample(&mut rng),
                c[1] + noise.sample(&mut rng),
            ]);
        }
    }
    let points = DescriptorSet::from_rows(&rows)?;

    let fit = kmeans_fit(
        &points,
        &KMeansParams {
            k: 3,
            seed: 0,
            ..Default::default()
        },
    )?;
    println!(
        "converged={} after {} iterations, objective {:.4} -> {:.4}",
        fit.converged,
        fit.iterations,
        fit.objectives[0],
        fit.objectives.last().unwrap()
    );
    for i in 0..fit.codebook.k() {
        let c = fit.codebook.centroid(i);
        println!("centroid {i}: ({:.3}, {:.3})", c[0], c[1]);
    }
    Ok(())
}
