//! Independent reference implementations used by the integration tests and the
//! acceptance harness. Each oracle is written as plainly as possible and shares
//! no code with the library beyond its public types.

#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// Index of the closest centroid; the first one wins ties.
pub fn brute_nearest(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    for i in 1..centroids.len() {
        if sq_dist(x, &centroids[i]) < sq_dist(x, &centroids[best]) {
            best = i;
        }
    }
    best
}

pub fn brute_objective(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|x| sq_dist(x, &centroids[brute_nearest(x, centroids)]))
        .sum()
}

/// Straight-line VLAD: unit residual sums per word, one global standardization
/// with population moments (skipped when sigma is below 1e-12), final L2.
/// Returns the vector before and after the final L2 step.
pub fn naive_vlad(descriptors: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let k = centroids.len();
    let d = centroids[0].len();
    let mut v = vec![0.0; k * d];
    for word in 0..k {
        for x in descriptors {
            if brute_nearest(x, centroids) != word {
                continue;
            }
            let r: Vec<f64> = (0..d).map(|j| x[j] - centroids[word][j]).collect();
            let norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            for j in 0..d {
                v[word * d + j] += r[j] / norm;
            }
        }
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sigma = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = if sigma < 1e-12 {
        v
    } else {
        v.iter().map(|a| (a - mean) / sigma).collect()
    };
    let norm = z.iter().map(|a| a * a).sum::<f64>().sqrt();
    let out = if norm < 1e-12 {
        z.clone()
    } else {
        z.iter().map(|a| a / norm).collect()
    };
    (z, out)
}

/// Double-loop ranking: every distance computed directly, then a stable sort.
pub fn brute_rank(db: &[Vec<f64>], q: &[f64], exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (i, row) in db.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        out.push((i, sq_dist(row, q).sqrt()));
    }
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    out
}

/// AP by direct counting over the ranked ids.
pub fn naive_ap(ranked: &[&str], relevant: &BTreeSet<&str>) -> f64 {
    let mut hits = 0.0;
    let mut total = 0.0;
    for (r, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1.0;
            total += hits / (r + 1) as f64;
        }
    }
    total / relevant.len() as f64
}

pub fn naive_top4(ranked: &[&str], relevant: &BTreeSet<&str>) -> f64 {
    ranked
        .iter()
        .take(4)
        .filter(|id| relevant.contains(*id))
        .count() as f64
}

/// Sample covariance with the `n - 1` divisor.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                c[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    c
}

/// Orthonormal `d x d` matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

pub fn apply(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * nalgebra::DVector::from_column_slice(v))
        .iter()
        .copied()
        .collect()
}

pub fn blobs(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], per: usize, sigma: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for c in centers {
        for _ in 0..per {
            out.push(
                c.iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + sigma * z
                    })
                    .collect(),
            );
        }
    }
    out
}
