//! VLAD aggregation with residual normalization, Z-score normalization and a
//! final L2 step, plus the query-side locVLAD variant.
//!
//! For every visual word `i` the encoder accumulates unit residuals
//! `(x - mu_i) / ||x - mu_i||` over the descriptors quantized to `i`. The
//! concatenated `K * d` vector is then standardized with its mean and
//! population standard deviation and finally scaled to unit length.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::ddr::{DdrConfig, DescriptorSet};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Residuals shorter than this contribute nothing.
pub const RESIDUAL_EPS: f64 = 1e-12;
/// Standard deviations below this skip standardization.
pub const SIGMA_EPS: f64 = 1e-12;
/// Vectors with a smaller norm are flagged degenerate instead of normalized.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    ResidualNormalized,
    Zscored,
    L2Final,
    Whitened,
}

/// Which components share one mean/std pair during standardization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZScoreScope {
    /// One pair over the whole concatenated vector.
    #[default]
    Global,
    /// One pair per visual-word block.
    PerWord,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VladConfig {
    pub zscore_scope: ZScoreScope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VladVector {
    pub k: usize,
    pub d: usize,
    pub values: Vec<f64>,
    pub stage: Stage,
    pub whitened_dim: Option<usize>,
    /// Set when the vector was (numerically) zero and could not be normalized.
    pub degenerate: bool,
}

impl VladVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit length; returns false (leaving `v` untouched) when its norm is below [`NORM_EPS`].
pub(crate) fn l2_normalize(v: &mut [f64]) -> bool {
    let n = l2_norm(v);
    if n < NORM_EPS {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Every intermediate of one encoding, for inspection and testing.
#[derive(Debug, Clone)]
pub struct VladTrace {
    /// Plain residual sums.
    pub raw: Vec<f64>,
    /// Sums of unit residuals.
    pub residual_normalized: Vec<f64>,
    /// After standardization, before the final L2 step.
    pub zscored: Vec<f64>,
    /// True when some standard deviation fell below [`SIGMA_EPS`].
    pub sigma_guard_fired: bool,
    pub output: VladVector,
}

pub fn vlad_encode(ds: &DescriptorSet, cb: &Codebook) -> Result<VladVector> {
    vlad_encode_with(ds, cb, &VladConfig::default())
}

pub fn vlad_encode_with(ds: &DescriptorSet, cb: &Codebook, cfg: &VladConfig) -> Result<VladVector> {
    vlad_trace(ds, cb, cfg).map(|t| t.output)
}

pub fn vlad_trace(ds: &DescriptorSet, cb: &Codebook, cfg: &VladConfig) -> Result<VladTrace> {
    let (k, d) = (cb.k(), cb.dim());
    if ds.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: ds.dim(),
        });
    }
    if ds.is_empty() {
        return Err(Error::EmptyDescriptors);
    }

    let mut raw = vec![0.0; k * d];
    let mut unit = vec![0.0; k * d];
    let mut residual = vec![0.0; d];
    for x in ds.rows() {
        let (word, _) = cb.nearest(x);
        let mu = cb.centroid(word);
        residual
            .iter_mut()
            .zip(x.iter().zip(mu))
            .for_each(|(r, (a, b))| *r = a - b);
        let block = word * d..(word + 1) * d;
        raw[block.clone()]
            .iter_mut()
            .zip(&residual)
            .for_each(|(acc, r)| *acc += r);
        let n = l2_norm(&residual);
        if n >= RESIDUAL_EPS {
            unit[block]
                .iter_mut()
                .zip(&residual)
                .for_each(|(acc, r)| *acc += r / n);
        }
    }

    let mut z = unit.clone();
    let sigma_guard_fired = match cfg.zscore_scope {
        ZScoreScope::Global => standardize(&mut z),
        ZScoreScope::PerWord => z
            .chunks_exact_mut(d)
            .map(standardize)
            .fold(false, |a, b| a | b),
    };

    let mut values = z.clone();
    let degenerate = !l2_normalize(&mut values);
    Ok(VladTrace {
        raw,
        residual_normalized: unit,
        zscored: z,
        sigma_guard_fired,
        output: VladVector {
            k,
            d,
            values,
            stage: Stage::L2Final,
            whitened_dim: None,
            degenerate,
        },
    })
}

/// `(v - m) / sigma` in place with population moments. Returns true, leaving
/// `v` unchanged, when sigma is below [`SIGMA_EPS`].
fn standardize(v: &mut [f64]) -> bool {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma < SIGMA_EPS {
        return true;
    }
    v.iter_mut().for_each(|x| *x = (*x - mean) / sigma);
    false
}

pub const DEFAULT_CENTRAL_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocVladConfig {
    /// Fraction of cells kept along each axis, centered.
    pub central_fraction: f64,
    /// Database images get plain VLAD; only queries use the central average.
    pub queries_only: bool,
}

impl Default for LocVladConfig {
    fn default() -> Self {
        Self {
            central_fraction: DEFAULT_CENTRAL_FRACTION,
            queries_only: true,
        }
    }
}

impl LocVladConfig {
    pub fn new(central_fraction: f64, queries_only: bool) -> Result<Self> {
        if !(central_fraction > 0.0 && central_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "central_fraction {central_fraction} outside (0, 1]"
            )));
        }
        Ok(Self {
            central_fraction,
            queries_only,
        })
    }
}

/// Rows and columns of the centered `ceil(f * H) x ceil(f * W)` window.
pub fn central_window(height: usize, width: usize, fraction: f64) -> (Range<usize>, Range<usize>) {
    let span = |n: usize| {
        let len = ((fraction * n as f64).ceil() as usize).clamp(1.min(n), n);
        let start = (n - len) / 2;
        start..start + len
    };
    (span(height), span(width))
}

/// Mean of the whole-image VLAD and the central-window VLAD, renormalized.
pub fn locvlad_encode(
    fm: &FeatureMap,
    ddr: &DdrConfig,
    loc: &LocVladConfig,
    cb: &Codebook,
) -> Result<VladVector> {
    locvlad_encode_with(fm, ddr, loc, cb, &VladConfig::default())
}

pub fn locvlad_encode_with(
    fm: &FeatureMap,
    ddr: &DdrConfig,
    loc: &LocVladConfig,
    cb: &Codebook,
    cfg: &VladConfig,
) -> Result<VladVector> {
    let ds = ddr.describe(fm)?;
    locvlad_from_descriptors(&ds, fm.height(), fm.width(), loc, cb, cfg)
}

fn locvlad_from_descriptors(
    ds: &DescriptorSet,
    height: usize,
    width: usize,
    loc: &LocVladConfig,
    cb: &Codebook,
    cfg: &VladConfig,
) -> Result<VladVector> {
    let full = vlad_encode_with(ds, cb, cfg)?;
    let (rows, cols) = central_window(height, width, loc.central_fraction);
    if rows.len() == height && cols.len() == width {
        return Ok(full);
    }
    let center_ds =
        ds.filter_cells(|c| rows.contains(&(c.h as usize)) && cols.contains(&(c.w as usize)));
    if center_ds.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "central window of a {height}x{width} map is empty"
        )));
    }
    let center = vlad_encode_with(&center_ds, cb, cfg)?;
    let mut values: Vec<f64> = full
        .values
        .iter()
        .zip(&center.values)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let degenerate = !l2_normalize(&mut values);
    Ok(VladVector {
        values,
        degenerate,
        ..full
    })
}

/// Feature map to final vector, choosing locVLAD or plain VLAD per image role.
#[derive(Debug, Clone)]
pub struct Encoder<'a> {
    pub codebook: &'a Codebook,
    pub ddr: DdrConfig,
    pub vlad: VladConfig,
    pub locvlad: Option<LocVladConfig>,
}

impl<'a> Encoder<'a> {
    pub fn new(codebook: &'a Codebook, ddr: DdrConfig) -> Self {
        Self {
            codebook,
            ddr,
            vlad: VladConfig::default(),
            locvlad: None,
        }
    }

    pub fn with_locvlad(mut self, loc: LocVladConfig) -> Self {
        self.locvlad = Some(loc);
        self
    }

    pub fn with_vlad_config(mut self, cfg: VladConfig) -> Self {
        self.vlad = cfg;
        self
    }

    /// True when an image in this role is encoded with locVLAD.
    pub fn uses_locvlad(&self, is_query: bool) -> bool {
        matches!(self.locvlad, Some(loc) if is_query || !loc.queries_only)
    }

    pub fn encode(&self, fm: &FeatureMap, is_query: bool) -> Result<VladVector> {
        let ds = self.ddr.describe(fm)?;
        match self.locvlad {
            Some(loc) if self.uses_locvlad(is_query) => locvlad_from_descriptors(
                &ds,
                fm.height(),
                fm.width(),
                &loc,
                self.codebook,
                &self.vlad,
            ),
            _ => vlad_encode_with(&ds, self.codebook, &self.vlad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_word_sigma_guard_example() {
        let cb = Codebook::new(2, vec![0.0, 0.0], "t").unwrap();
        let ds = DescriptorSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = vlad_trace(&ds, &cb, &VladConfig::default()).unwrap();
        assert_eq!(t.residual_normalized, vec![1.0, 1.0]);
        assert!(t.sigma_guard_fired);
        let s = 0.5f64.sqrt();
        assert!((t.output.values[0] - s).abs() < 1e-15);
        assert!((t.output.values[1] - s).abs() < 1e-15);
        assert!(!t.output.degenerate);
    }

    #[test]
    fn descriptors_on_centroids_give_zero_vector() {
        let cb = Codebook::new(2, vec![0.0, 0.0, 1.0, 1.0], "t").unwrap();
        let ds =
            DescriptorSet::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let t = vlad_trace(&ds, &cb, &VladConfig::default()).unwrap();
        assert!(t.raw.iter().all(|&v| v == 0.0));
        assert!(t.output.degenerate);
        assert!(t.output.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_word_is_zero_block_before_zscore() {
        let cb = Codebook::new(1, vec![0.0, 10.0], "t").unwrap();
        let ds = DescriptorSet::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let t = vlad_trace(&ds, &cb, &VladConfig::default()).unwrap();
        assert_eq!(t.residual_normalized, vec![2.0, 0.0]);
        assert_eq!(t.raw, vec![3.0, 0.0]);
    }

    #[test]
    fn errors() {
        let cb = Codebook::new(2, vec![0.0, 0.0], "t").unwrap();
        let ds = DescriptorSet::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            vlad_encode(&ds, &cb),
            Err(Error::DimensionMismatch { .. })
        ));
        let empty = DescriptorSet::new(2, vec![]).unwrap();
        assert!(matches!(
            vlad_encode(&empty, &cb),
            Err(Error::EmptyDescriptors)
        ));
    }

    #[test]
    fn per_word_scope_standardizes_each_block() {
        let cb = Codebook::new(2, vec![0.0, 0.0, 10.0, 10.0], "t").unwrap();
        let ds = DescriptorSet::from_rows(&[
            vec![1.0, 0.2],
            vec![0.3, 2.0],
            vec![11.0, 9.0],
            vec![9.5, 10.2],
        ])
        .unwrap();
        let cfg = VladConfig {
            zscore_scope: ZScoreScope::PerWord,
        };
        let t = vlad_trace(&ds, &cb, &cfg).unwrap();
        for block in t.zscored.chunks_exact(2) {
            let m = (block[0] + block[1]) / 2.0;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn central_window_geometry() {
        assert_eq!(central_window(4, 4, 0.5), (1..3, 1..3));
        assert_eq!(central_window(8, 8, 0.75), (1..7, 1..7));
        assert_eq!(central_window(5, 3, 1.0), (0..5, 0..3));
        assert_eq!(central_window(1, 1, 0.01), (0..1, 0..1));
        assert_eq!(central_window(5, 5, 0.5), (1..4, 1..4));
        assert!(LocVladConfig::new(0.0, true).is_err());
        assert!(LocVladConfig::new(1.5, true).is_err());
    }
}
