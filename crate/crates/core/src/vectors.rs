//! Row matrices of per-image vectors with their image ids.
//!
//! Stored as a rank-2 tensor file next to a JSON sidecar with the same stem:
//! `queries.fmap` pairs with `queries.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_json, read_tensor, write_json, write_tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    pub dim: usize,
    pub ids: Vec<String>,
    pub values: Vec<f64>,
    /// Free-form description of how the vectors were produced.
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    dim: usize,
    image_ids: Vec<String>,
    config: serde_json::Value,
}

pub fn sidecar_path(tensor_path: &Path) -> PathBuf {
    tensor_path.with_extension("json")
}

impl VectorSet {
    pub fn new(dim: usize, config: serde_json::Value) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
            config,
        }
    }

    pub fn push(&mut self, id: impl Into<String>, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        self.ids.push(id.into());
        self.values.extend_from_slice(v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.values.chunks_exact(self.dim))
    }

    /// Rounds every value through f32, matching what a save/load cycle yields.
    pub fn quantized(mut self) -> Self {
        self.values
            .iter_mut()
            .for_each(|v| *v = f64::from(*v as f32));
        self
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.is_empty() {
            return Err(Error::InvalidConfig(
                "cannot save an empty vector set".into(),
            ));
        }
        let data: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        write_tensor(path, &[self.len(), self.dim], &data)?;
        write_json(
            &sidecar_path(path),
            &Sidecar {
                rows: self.len(),
                dim: self.dim,
                image_ids: self.ids.clone(),
                config: self.config.clone(),
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: Sidecar = read_json(&sidecar_path(path))?;
        let t = read_tensor(path)?;
        if t.shape != [meta.rows, meta.dim] || meta.image_ids.len() != meta.rows {
            return Err(Error::ShapeMismatch {
                shape: t.shape,
                expected: meta.rows * meta.dim,
                found: meta.image_ids.len() * meta.dim,
            });
        }
        Ok(Self {
            dim: meta.dim,
            ids: meta.image_ids,
            values: t.to_f64(),
            config: meta.config,
        })
    }
}
