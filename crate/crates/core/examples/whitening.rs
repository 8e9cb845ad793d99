//! Fits PCA-whitening on correlated data and checks the whitened covariance.

use ddr_vlad::whitening::whitening_fit;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> anyhow::Result<()> {
    let (n, d, p) = (2000, 8, 4);
    let unit = Normal::new(0.0, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| unit.sample(&mut rng)).collect();
        // Each coordinate mixes its neighbour, with growing scale.
        for j in 0..d {
            rows.push((j as f64 + 1.0) * (z[j] + 0.5 * z[(j + 1) % d]));
        }
    }
    let model = whitening_fit(&rows, d, p, 0.0)?;
    println!("top eigenvalues: {:?}", &model.eigenvalues()[..p]);

    let projected: Vec<Vec<f64>> = rows
        .chunks_exact(d)
        .map(|r| model.project(r))
        .collect::<Result<_, _>>()?;
    for i in 0..p {
        let var: f64 = projected.iter().map(|y| y[i] * y[i]).sum::<f64>() / (n - 1) as f64;
        println!("whitened variance along component {i}: {var:.6}");
    }
    Ok(())
}
