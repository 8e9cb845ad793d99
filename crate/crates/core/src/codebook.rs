//! Visual vocabulary: K-means++ seeding, Lloyd iterations and the
//! nearest-centroid quantizer.
//!
//! Distances are squared Euclidean. Reductions over points run in fixed-size
//! chunks combined in chunk order, so results do not depend on the number of
//! worker threads.

use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddr::DescriptorSet;
use crate::error::{Error, Result};
use crate::tensor::{read_json, read_tensor, write_json, write_tensor};

pub const DEFAULT_K: usize = 100;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-4;
/// Descriptor pools larger than this are subsampled before training.
pub const DEFAULT_MAX_POOL: usize = 2_000_000;

const CHUNK: usize = 8192;
const DUPLICATE_EPS: f64 = 1e-12;

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f64>,
    trained_on: String,
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CodebookSidecar {
    k: usize,
    d: usize,
    trained_on: String,
    seed: Option<u64>,
}

impl Codebook {
    /// Builds a codebook from `k x dim` row-major centroids.
    ///
    /// Centroids must be finite and pairwise distinct.
    pub fn new(dim: usize, centroids: Vec<f64>, trained_on: impl Into<String>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: centroids.len(),
            });
        }
        if let Some(index) = centroids.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let k = centroids.len() / dim;
        let cb = Self {
            k,
            dim,
            centroids,
            trained_on: trained_on.into(),
            seed: None,
        };
        for i in 0..k {
            for j in 0..i {
                let same = cb
                    .centroid(i)
                    .iter()
                    .zip(cb.centroid(j))
                    .all(|(a, b)| (a - b).abs() <= DUPLICATE_EPS);
                if same {
                    return Err(Error::InvalidConfig(format!(
                        "centroids {j} and {i} are identical"
                    )));
                }
            }
        }
        Ok(cb)
    }

    pub fn with_trained_on(mut self, name: impl Into<String>) -> Self {
        self.trained_on = name.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    /// Index and squared distance of the closest centroid, lowest index on ties.
    pub(crate) fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    pub fn quantize(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(self.nearest(x).0)
    }

    /// Word index for every descriptor.
    pub fn quantize_all(&self, ds: &DescriptorSet) -> Result<Vec<usize>> {
        if ds.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: ds.dim(),
            });
        }
        Ok(ds
            .as_flat()
            .par_chunks_exact(self.dim)
            .map(|x| self.nearest(x).0)
            .collect())
    }

    /// Writes `codebook.fmap` (K x d) and `codebook.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data: Vec<f32> = self.centroids.iter().map(|&v| v as f32).collect();
        write_tensor(dir.join("codebook.fmap"), &[self.k, self.dim], &data)?;
        write_json(
            &dir.join("codebook.json"),
            &CodebookSidecar {
                k: self.k,
                d: self.dim,
                trained_on: self.trained_on.clone(),
                seed: self.seed,
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: CodebookSidecar = read_json(&dir.join("codebook.json"))?;
        let t = read_tensor(dir.join("codebook.fmap"))?;
        if t.shape != [meta.k, meta.d] {
            return Err(Error::ShapeMismatch {
                shape: t.shape,
                expected: meta.k * meta.d,
                found: t.data.len(),
            });
        }
        let mut cb = Self::new(meta.d, t.to_f64(), meta.trained_on)?;
        cb.seed = meta.seed;
        Ok(cb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Objective after every assignment step, the last one taken on the final centroids.
    pub objectives: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// D²-weighted seeding: the first centroid uniformly, each next one with
/// probability proportional to its squared distance to the nearest chosen centroid.
pub fn kmeans_pp_init(points: &DescriptorSet, k: usize, seed: u64) -> Result<Codebook> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::InsufficientPoints { n, k });
    }
    let dim = points.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut dist: Vec<f64> = points
        .as_flat()
        .par_chunks_exact(dim)
        .map(|x| sq_dist(x, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total = chunked_sum(&dist);
        if total <= 0.0 {
            return Err(Error::DegenerateInit {
                distinct: chosen.len(),
                k,
            });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in dist.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            pick = Some(i);
            acc += d;
            if acc > target {
                break;
            }
        }
        let pick = pick.expect("positive total implies a positive weight");
        chosen.push(pick);
        let c = points.row(pick);
        dist.par_iter_mut()
            .zip(points.as_flat().par_chunks_exact(dim))
            .for_each(|(d, x)| *d = d.min(sq_dist(x, c)));
    }
    let mut centroids = Vec::with_capacity(k * dim);
    for &i in &chosen {
        centroids.extend_from_slice(points.row(i));
    }
    Ok(Codebook::new(dim, centroids, "")?.with_seed(seed))
}

/// Lloyd iterations from K-means++ seeding; returns only the codebook.
pub fn kmeans_train(
    points: &DescriptorSet,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<Codebook> {
    kmeans_fit(
        points,
        &KMeansParams {
            k,
            seed,
            max_iters,
            tol,
        },
    )
    .map(|f| f.codebook)
}

pub fn kmeans_fit(points: &DescriptorSet, params: &KMeansParams) -> Result<KMeansFit> {
    if params.max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
    }
    let init = kmeans_pp_init(points, params.k, params.seed)?;
    let (k, dim) = (init.k, init.dim);
    let mut centroids = init.centroids;
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iters {
        let (labels, dists) = assign(points, &centroids, dim);
        objectives.push(chunked_sum(&dists));

        let (sums, counts) = cluster_sums(points, &labels, k);
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in next[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s * inv;
                }
            }
        }
        reseed_empty(points, &counts, &dists, &mut next, dim);

        let movement = (0..k)
            .map(|c| {
                sq_dist(
                    &next[c * dim..(c + 1) * dim],
                    &centroids[c * dim..(c + 1) * dim],
                )
            })
            .fold(0.0f64, f64::max)
            .sqrt();
        centroids = next;
        iterations += 1;
        if movement < params.tol {
            converged = true;
            break;
        }
    }
    let (_, dists) = assign(points, &centroids, dim);
    objectives.push(chunked_sum(&dists));

    let codebook = Codebook::new(dim, centroids, "")?.with_seed(params.seed);
    Ok(KMeansFit {
        codebook,
        objectives,
        iterations,
        converged,
    })
}

fn assign(points: &DescriptorSet, centroids: &[f64], dim: usize) -> (Vec<usize>, Vec<f64>) {
    points
        .as_flat()
        .par_chunks_exact(dim)
        .map(|x| {
            let mut best = (0, f64::INFINITY);
            for (i, c) in centroids.chunks_exact(dim).enumerate() {
                let d = sq_dist(x, c);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best
        })
        .unzip()
}

fn chunked_sum(values: &[f64]) -> f64 {
    let partial: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partial.iter().sum()
}

fn cluster_sums(points: &DescriptorSet, labels: &[usize], k: usize) -> (Vec<f64>, Vec<usize>) {
    let dim = points.dim();
    let partial: Vec<(Vec<f64>, Vec<usize>)> = points
        .as_flat()
        .par_chunks(CHUNK * dim)
        .zip(labels.par_chunks(CHUNK))
        .map(|(rows, labels)| {
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (x, &l) in rows.chunks_exact(dim).zip(labels) {
                counts[l] += 1;
                for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(x) {
                    *s += v;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (s, c) in partial {
        sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        counts.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
    }
    (sums, counts)
}

/// Moves each empty centroid onto the point farthest from its assigned centroid.
fn reseed_empty(
    points: &DescriptorSet,
    counts: &[usize],
    dists: &[f64],
    centroids: &mut [f64],
    dim: usize,
) {
    let empty: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] == 0).collect();
    if empty.is_empty() {
        return;
    }
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
    for (c, &p) in empty.iter().zip(&order) {
        log::debug!("reseeding empty cluster {c} at point {p}");
        centroids[c * dim..(c + 1) * dim].copy_from_slice(points.row(p));
    }
}

/// Uniform sample of at most `max` rows (kept in original order).
pub fn subsample(points: &DescriptorSet, max: usize, seed: u64) -> DescriptorSet {
    if points.len() <= max {
        return points.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, points.len(), max).into_vec();
    picked.sort_unstable();
    let mut rows = Vec::with_capacity(max * points.dim());
    for i in picked {
        rows.extend_from_slice(points.row(i));
    }
    DescriptorSet::new(points.dim(), rows).expect("rows come from a valid set")
}
