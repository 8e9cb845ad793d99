//! PCA-whitening of aggregated vectors.
//!
//! The model keeps the top `p` principal directions of the (sample) covariance
//! of the training vectors, each scaled by `1 / sqrt(lambda + ridge)`. When the
//! input dimension exceeds the number of samples the eigenproblem is solved on
//! the `n x n` Gram matrix instead of the `D x D` covariance.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_json, read_tensor, write_json, write_tensor};
use crate::vlad::{l2_normalize, Stage, VladVector};

/// Eigenvalues below this are treated as zero.
pub const MIN_EIGENVALUE: f64 = 1e-10;
pub const DEFAULT_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    input_dim: usize,
    output_dim: usize,
    mean: Vec<f64>,
    /// `output_dim x input_dim`, row-major, rows already scaled.
    basis: Vec<f64>,
    eigenvalues: Vec<f64>,
    ridge: f64,
    trained_on: String,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    input_dim: usize,
    output_dim: usize,
    ridge: f64,
    trained_on: String,
    eigenvalues: Vec<f64>,
}

/// Fits a whitening model on `n` row-major training vectors of dimension `dim`.
pub fn whitening_fit(
    rows: &[f64],
    dim: usize,
    output_dim: usize,
    ridge: f64,
) -> Result<WhiteningModel> {
    if dim == 0 || !rows.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: rows.len(),
        });
    }
    if output_dim == 0 || output_dim > dim {
        return Err(Error::InvalidConfig(format!(
            "output_dim {output_dim} must be in 1..={dim}"
        )));
    }
    if ridge < 0.0 {
        return Err(Error::InvalidConfig("ridge must be non-negative".into()));
    }
    let n = rows.len() / dim;
    if n < output_dim + 1 {
        return Err(Error::InsufficientSamples { n, p: output_dim });
    }

    let x = DMatrix::from_row_slice(n, dim, rows);
    let mean: DVector<f64> = x.row_mean().transpose();
    let mut xc = x;
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let scale = 1.0 / (n - 1) as f64;

    // (eigenvalue, unit direction) pairs, any order.
    let mut components: Vec<(f64, DVector<f64>)> = if dim <= n {
        let cov = (xc.transpose() * &xc) * scale;
        let eig = SymmetricEigen::new(cov);
        eig.eigenvalues
            .iter()
            .zip(eig.eigenvectors.column_iter())
            .map(|(&l, v)| (l, v.into_owned()))
            .collect()
    } else {
        let gram = (&xc * xc.transpose()) * scale;
        let eig = SymmetricEigen::new(gram);
        eig.eigenvalues
            .iter()
            .zip(eig.eigenvectors.column_iter())
            .filter(|(&l, _)| l >= MIN_EIGENVALUE)
            .map(|(&l, a)| {
                let mut u = xc.transpose() * a;
                let norm = u.norm();
                u /= norm;
                (l, u)
            })
            .collect()
    };
    components.sort_by(|a, b| b.0.total_cmp(&a.0));
    let usable = components
        .iter()
        .filter(|(l, _)| *l >= MIN_EIGENVALUE)
        .count();
    if usable < output_dim {
        return Err(Error::RankDeficient {
            usable,
            requested: output_dim,
        });
    }
    components.truncate(output_dim);

    let mut basis = Vec::with_capacity(output_dim * dim);
    let mut eigenvalues = Vec::with_capacity(output_dim);
    for (l, mut u) in components {
        fix_sign(&mut u);
        let s = 1.0 / (l + ridge).sqrt();
        basis.extend(u.iter().map(|v| v * s));
        eigenvalues.push(l);
    }
    Ok(WhiteningModel {
        input_dim: dim,
        output_dim,
        mean: mean.iter().copied().collect(),
        basis,
        eigenvalues,
        ridge,
        trained_on: String::new(),
    })
}

/// Makes the largest-magnitude coordinate positive (first one on ties).
fn fix_sign(u: &mut DVector<f64>) {
    let mut best = 0;
    for (i, v) in u.iter().enumerate() {
        if v.abs() > u[best].abs() {
            best = i;
        }
    }
    if u[best] < 0.0 {
        u.neg_mut();
    }
}

impl WhiteningModel {
    pub fn with_trained_on(mut self, name: impl Into<String>) -> Self {
        self.trained_on = name.into();
        self
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        &self.basis[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Unit principal direction `i` (the basis row without its whitening scale).
    pub fn direction(&self, i: usize) -> Vec<f64> {
        let s = (self.eigenvalues[i] + self.ridge).sqrt();
        self.basis_row(i).iter().map(|v| v * s).collect()
    }

    /// `basis * (v - mean)` without renormalization.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: v.len(),
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .basis
            .chunks_exact(self.input_dim)
            .map(|row| row.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Maps a projected vector back to the input space (exact inverse at full rank).
    pub fn unproject(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim,
                found: y.len(),
            });
        }
        let mut out = self.mean.clone();
        for (i, &yi) in y.iter().enumerate() {
            let s = self.eigenvalues[i] + self.ridge;
            for (o, b) in out.iter_mut().zip(self.basis_row(i)) {
                *o += yi * b * s;
            }
        }
        Ok(out)
    }

    /// Projects and renormalizes a finished VLAD vector.
    pub fn apply(&self, v: &VladVector) -> Result<VladVector> {
        if v.stage != Stage::L2Final {
            return Err(Error::InvalidConfig(format!(
                "whitening expects an l2_final vector, got {:?}",
                v.stage
            )));
        }
        let (values, degenerate) = self.apply_slice(&v.values)?;
        Ok(VladVector {
            k: v.k,
            d: v.d,
            values,
            stage: Stage::Whitened,
            whitened_dim: Some(self.output_dim),
            degenerate,
        })
    }

    /// Projection followed by L2 normalization; the flag reports a degenerate result.
    pub fn apply_slice(&self, v: &[f64]) -> Result<(Vec<f64>, bool)> {
        let mut y = self.project(v)?;
        let ok = l2_normalize(&mut y);
        Ok((y, !ok))
    }

    /// Writes `mean.fmap`, `basis.fmap` and `whitening.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        write_tensor(dir.join("mean.fmap"), &[self.input_dim], &f32s(&self.mean))?;
        write_tensor(
            dir.join("basis.fmap"),
            &[self.output_dim, self.input_dim],
            &f32s(&self.basis),
        )?;
        write_json(
            &dir.join("whitening.json"),
            &Sidecar {
                input_dim: self.input_dim,
                output_dim: self.output_dim,
                ridge: self.ridge,
                trained_on: self.trained_on.clone(),
                eigenvalues: self.eigenvalues.clone(),
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: Sidecar = read_json(&dir.join("whitening.json"))?;
        let mean = read_tensor(dir.join("mean.fmap"))?;
        let basis = read_tensor(dir.join("basis.fmap"))?;
        if mean.shape != [meta.input_dim]
            || basis.shape != [meta.output_dim, meta.input_dim]
            || meta.eigenvalues.len() != meta.output_dim
        {
            return Err(Error::ShapeMismatch {
                shape: basis.shape,
                expected: meta.output_dim * meta.input_dim,
                found: basis.data.len(),
            });
        }
        Ok(Self {
            input_dim: meta.input_dim,
            output_dim: meta.output_dim,
            mean: mean.to_f64(),
            basis: basis.to_f64(),
            eigenvalues: meta.eigenvalues,
            ridge: meta.ridge,
            trained_on: meta.trained_on,
        })
    }
}
