//! Exhaustive L2 search over unit-norm database vectors.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_json, read_tensor, write_json, write_tensor};
use crate::vectors::VectorSet;

pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub image_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dim: usize,
    image_ids: Vec<String>,
}

pub fn index_build(vectors: &[f64], dim: usize, ids: Vec<String>) -> Result<Index> {
    if dim == 0 || vectors.len() != ids.len() * dim {
        return Err(Error::DimensionMismatch {
            expected: ids.len() * dim,
            found: vectors.len(),
        });
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for (id, row) in ids.iter().zip(vectors.chunks_exact(dim)) {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnitNorm {
                image_id: id.clone(),
                norm,
            });
        }
    }
    Ok(Index {
        dim,
        ids,
        matrix: vectors.to_vec(),
    })
}

impl Index {
    pub fn from_vectors(set: &VectorSet) -> Result<Self> {
        index_build(&set.values, set.dim, set.ids.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes `matrix.fmap` and `index.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data: Vec<f32> = self.matrix.iter().map(|&v| v as f32).collect();
        write_tensor(dir.join("matrix.fmap"), &[self.len(), self.dim], &data)?;
        write_json(
            &dir.join("index.json"),
            &Sidecar {
                dim: self.dim,
                image_ids: self.ids.clone(),
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: Sidecar = read_json(&dir.join("index.json"))?;
        let t = read_tensor(dir.join("matrix.fmap"))?;
        if t.shape != [meta.image_ids.len(), meta.dim] {
            return Err(Error::ShapeMismatch {
                shape: t.shape,
                expected: meta.image_ids.len() * meta.dim,
                found: t.data.len(),
            });
        }
        index_build(&t.to_f64(), meta.dim, meta.image_ids)
    }
}

/// Ranks every database row by Euclidean distance to `q`.
///
/// Equal distances keep insertion order. `top_k = None` returns the full ranking.
pub fn search(
    idx: &Index,
    q: &[f64],
    top_k: Option<usize>,
    exclude_id: Option<&str>,
) -> Result<Vec<Hit>> {
    if q.len() != idx.dim {
        return Err(Error::DimensionMismatch {
            expected: idx.dim,
            found: q.len(),
        });
    }
    let mut scored: Vec<(usize, f64)> = idx
        .matrix
        .chunks_exact(idx.dim)
        .enumerate()
        .filter(|(i, _)| exclude_id != Some(idx.ids[*i].as_str()))
        .map(|(i, row)| {
            let d2: f64 = row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (i, d2.sqrt())
        })
        .collect();
    // Stable sort keeps insertion order among ties.
    scored.sort_by(|a, b| a.1.total_cmp(&b.1));
    if let Some(k) = top_k {
        scored.truncate(k);
    }
    Ok(scored
        .into_iter()
        .map(|(i, distance)| Hit {
            image_id: idx.ids[i].clone(),
            distance,
        })
        .collect())
}

/// Searches every query in parallel; output order follows `queries`.
pub fn search_all(
    idx: &Index,
    queries: &VectorSet,
    top_k: Option<usize>,
    exclude_self: bool,
) -> Result<Vec<RankedList>> {
    queries
        .ids
        .par_iter()
        .zip(queries.values.par_chunks_exact(queries.dim))
        .map(|(id, q)| {
            let exclude = exclude_self.then_some(id.as_str());
            let hits = search(idx, q, top_k, exclude).map_err(|e| e.in_stage("query", Some(id)))?;
            Ok(RankedList {
                query_id: id.clone(),
                hits,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_index() -> Index {
        let s = 0.5f64.sqrt();
        index_build(
            &[1.0, 0.0, 0.0, 1.0, s, s],
            2,
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    #[test]
    fn builds_and_self_retrieves() {
        let idx = unit_index();
        assert_eq!(idx.len(), 3);
        let hits = search(&idx, &[0.0, 1.0], None, None).unwrap();
        assert_eq!(hits[0].image_id, "b");
        assert_eq!(hits[0].distance, 0.0);
        assert_eq!(hits.len(), 3);
    }

    #[test]
    fn duplicate_and_bad_rows_rejected() {
        assert!(matches!(
            index_build(&[1.0, 0.0, 0.0, 1.0], 2, vec!["a".into(), "a".into()]),
            Err(Error::DuplicateId(_))
        ));
        assert!(matches!(
            index_build(&[2.0, 0.0], 2, vec!["a".into()]),
            Err(Error::NotUnitNorm { .. })
        ));
        assert!(matches!(
            index_build(&[f64::NAN, 0.0], 2, vec!["a".into()]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn top_k_and_exclusion() {
        let idx = unit_index();
        let hits = search(&idx, &[1.0, 0.0], Some(2), Some("a")).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].image_id, "c");
        assert!(hits.iter().all(|h| h.image_id != "a"));
        assert!(search(&idx, &[1.0], None, None).is_err());
    }

    #[test]
    fn ties_keep_insertion_order() {
        let idx = index_build(
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
            2,
            vec!["w".into(), "x".into(), "y".into(), "z".into()],
        )
        .unwrap();
        let hits = search(&idx, &[0.0, 0.0], None, None).unwrap();
        let order: Vec<&str> = hits.iter().map(|h| h.image_id.as_str()).collect();
        assert_eq!(order, ["w", "x", "y", "z"]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let idx = unit_index();
        idx.save(dir.path()).unwrap();
        let back = Index::load(dir.path()).unwrap();
        assert_eq!(back.ids(), idx.ids());
        assert_eq!(back.dim(), 2);
    }
}
