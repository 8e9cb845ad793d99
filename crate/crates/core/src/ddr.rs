//! Dense-depth representation: a `H x W x D` feature map becomes
//! `H * W * (D / split_factor)` descriptors of dimension `split_factor`.
//!
//! Descriptor `(h, w, j)` holds channels `[j * s, (j + 1) * s)` of cell `(h, w)`
//! and is stored at row `(h * W + w) * (D / s) + j`. Each row remembers its
//! cell so spatially distinct channels are never mixed.

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

pub const DEFAULT_SPLIT_FACTOR: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DdrConfig {
    pub split_factor: usize,
    pub apply_root_square: bool,
}

impl Default for DdrConfig {
    fn default() -> Self {
        Self {
            split_factor: DEFAULT_SPLIT_FACTOR,
            apply_root_square: true,
        }
    }
}

impl DdrConfig {
    pub fn new(split_factor: usize, apply_root_square: bool) -> Result<Self> {
        if split_factor == 0 {
            return Err(Error::InvalidConfig("split_factor must be >= 1".into()));
        }
        Ok(Self {
            split_factor,
            apply_root_square,
        })
    }

    /// Split, then root-square normalize when enabled.
    pub fn describe(&self, fm: &FeatureMap) -> Result<DescriptorSet> {
        let ds = ddr_split(fm, self)?;
        Ok(if self.apply_root_square {
            root_square_normalize(ds)
        } else {
            ds
        })
    }
}

/// Spatial cell a descriptor came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub h: u32,
    pub w: u32,
}

/// `n` descriptors of dimension `d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    rows: Vec<f64>,
    origin: Option<Vec<Cell>>,
}

impl DescriptorSet {
    pub fn new(dim: usize, rows: Vec<f64>) -> Result<Self> {
        if dim == 0 || !rows.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: rows.len(),
            });
        }
        if let Some(index) = rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            dim,
            rows,
            origin: None,
        })
    }

    pub fn with_origin(mut self, origin: Vec<Cell>) -> Result<Self> {
        if origin.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: origin.len(),
            });
        }
        self.origin = Some(origin);
        Ok(self)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.as_ref().len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.as_ref().len(),
                });
            }
            flat.extend_from_slice(r.as_ref());
        }
        Self::new(dim, flat)
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.rows.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.rows
    }

    pub fn origin(&self) -> Option<&[Cell]> {
        self.origin.as_deref()
    }

    /// Keeps the descriptors whose cell satisfies `keep`. Without origins nothing is kept.
    pub fn filter_cells(&self, mut keep: impl FnMut(Cell) -> bool) -> DescriptorSet {
        let mut rows = Vec::new();
        let mut origin = Vec::new();
        if let Some(cells) = &self.origin {
            for (row, &cell) in self.rows().zip(cells) {
                if keep(cell) {
                    rows.extend_from_slice(row);
                    origin.push(cell);
                }
            }
        }
        DescriptorSet {
            dim: self.dim,
            rows,
            origin: Some(origin),
        }
    }

    /// Concatenates several sets of the same dimension; origins are dropped.
    pub fn concat<'a>(sets: impl IntoIterator<Item = &'a DescriptorSet>) -> Result<DescriptorSet> {
        let mut dim = None;
        let mut rows = Vec::new();
        for s in sets {
            match dim {
                None => dim = Some(s.dim),
                Some(d) if d != s.dim => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: s.dim,
                    })
                }
                _ => {}
            }
            rows.extend_from_slice(&s.rows);
        }
        let dim = dim.ok_or(Error::EmptyDescriptors)?;
        Ok(DescriptorSet {
            dim,
            rows,
            origin: None,
        })
    }
}

pub fn ddr_split(fm: &FeatureMap, cfg: &DdrConfig) -> Result<DescriptorSet> {
    let s = cfg.split_factor;
    let (h, w, depth) = (fm.height(), fm.width(), fm.depth());
    if s == 0 || depth % s != 0 {
        return Err(Error::NotDivisible {
            depth,
            split_factor: s,
        });
    }
    let per_cell = depth / s;
    // Row-major H/W/D layout already places descriptor (h, w, j) contiguously.
    let rows: Vec<f64> = fm.data().iter().map(|&v| f64::from(v)).collect();
    let mut origin = Vec::with_capacity(h * w * per_cell);
    for hh in 0..h {
        for ww in 0..w {
            let cell = Cell {
                h: hh as u32,
                w: ww as u32,
            };
            origin.extend(std::iter::repeat_n(cell, per_cell));
        }
    }
    Ok(DescriptorSet {
        dim: s,
        rows,
        origin: Some(origin),
    })
}

/// L1-normalizes each row, then applies `sign(x) * sqrt(|x|)`. Zero rows are unchanged.
pub fn root_square_normalize(mut ds: DescriptorSet) -> DescriptorSet {
    let dim = ds.dim;
    for row in ds.rows.chunks_exact_mut(dim) {
        let l1: f64 = row.iter().map(|v| v.abs()).sum();
        if l1 == 0.0 {
            continue;
        }
        for v in row.iter_mut() {
            let x = *v / l1;
            *v = x.signum() * x.abs().sqrt();
        }
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, d: usize) -> FeatureMap {
        let data = (0..h * w * d).map(|v| v as f32).collect();
        FeatureMap::new(h, w, d, data).unwrap()
    }

    #[test]
    fn mixed8_sized_map_gives_640_descriptors() {
        let ds = ddr_split(&map(8, 8, 1280), &DdrConfig::default()).unwrap();
        assert_eq!(ds.len(), 640);
        assert_eq!(ds.dim(), 128);
    }

    #[test]
    fn single_cell_full_split_is_identity() {
        let fm = map(1, 1, 6);
        let ds = ddr_split(&fm, &DdrConfig::new(6, false).unwrap()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.row(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn index_arithmetic_oracle_2x2x4() {
        let fm = map(2, 2, 4);
        let ds = ddr_split(&fm, &DdrConfig::new(2, false).unwrap()).unwrap();
        assert_eq!(ds.len(), 8);
        let origin = ds.origin().unwrap();
        let mut k = 0;
        for h in 0..2 {
            for w in 0..2 {
                for j in 0..2 {
                    let want: Vec<f64> = (0..2)
                        .map(|c| (h * 2 * 4 + w * 4 + j * 2 + c) as f64)
                        .collect();
                    assert_eq!(ds.row(k), &want[..]);
                    assert_eq!(
                        origin[k],
                        Cell {
                            h: h as u32,
                            w: w as u32
                        }
                    );
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn non_divisible_depth_is_error() {
        let err = ddr_split(&map(2, 2, 10), &DdrConfig::new(4, true).unwrap()).unwrap_err();
        assert!(matches!(
            err,
            Error::NotDivisible {
                depth: 10,
                split_factor: 4
            }
        ));
        assert!(DdrConfig::new(0, true).is_err());
    }

    #[test]
    fn root_square_cases() {
        let ds = DescriptorSet::from_rows(&[vec![4.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let out = root_square_normalize(ds);
        assert_eq!(out.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(out.row(1), &[0.0, 0.0, 0.0]);

        // L1 gives 0.25 per component, whose square root is 0.5; the row has unit L2 norm.
        let out = root_square_normalize(DescriptorSet::from_rows(&[vec![1.0; 4]]).unwrap());
        for &v in out.row(0) {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn root_square_keeps_sign() {
        let out = root_square_normalize(DescriptorSet::from_rows(&[vec![-1.0, 3.0]]).unwrap());
        assert!((out.row(0)[0] + 0.5).abs() < 1e-12);
        assert!((out.row(0)[1] - 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn filter_cells_keeps_origin() {
        let ds = ddr_split(&map(2, 2, 4), &DdrConfig::new(2, false).unwrap()).unwrap();
        let kept = ds.filter_cells(|c| c.h == 1);
        assert_eq!(kept.len(), 4);
        assert!(kept.origin().unwrap().iter().all(|c| c.h == 1));
        assert_eq!(kept.row(0), ds.row(4));
    }
}
