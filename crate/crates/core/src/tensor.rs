//! Binary tensor files for feature maps, codebooks and encoded vectors.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! 0..4   magic "FMAP"
//! 4      version = 1
//! 5      rank r, 1..=3
//! 6..8   reserved, zero
//! 8..    r x u32 dims
//!        product(dims) x f32, row-major, last dim innermost
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FMAP";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 8;

/// A dense f32 tensor of rank 1 to 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    /// Builds a rank-2 tensor from f64 rows, rounding to f32.
    pub fn from_rows(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(vec![rows, cols], values.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::BadRank(shape.len()));
    }
    let expected: usize = shape.iter().product();
    if expected != len || shape.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
        return Err(Error::ShapeMismatch {
            shape: shape.to_vec(),
            expected,
            found: len,
        });
    }
    Ok(())
}

/// Encodes a tensor into its file representation.
pub fn encode_tensor(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    check_shape(shape, data.len())?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * shape.len() + 4 * data.len());
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.push(shape.len() as u8);
    buf.extend_from_slice(&[0, 0]);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_tensor(path: impl AsRef<Path>, shape: &[usize], data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(shape, data)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Options for [`read_tensor_with`].
#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    /// Fail on NaN/Inf payload values. When false they are logged and kept.
    pub reject_non_finite: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self {
            reject_non_finite: true,
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor_with(path, ReadOptions::default())
}

pub fn read_tensor_with(path: impl AsRef<Path>, opts: ReadOptions) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, opts).map_err(|e| match e {
        Error::BadMagic(_) => Error::BadMagic(path.to_path_buf()),
        other => other,
    })
}

/// Reads only the header of a tensor file and returns its shape.
pub fn read_shape(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = Vec::with_capacity(HEADER_LEN + 12);
    file.take((HEADER_LEN + 12) as u64)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    if head.len() < 4 || head[..4] != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    if head.len() < HEADER_LEN {
        return Err(Error::TruncatedHeader);
    }
    if head[4] != VERSION {
        return Err(Error::UnsupportedVersion(head[4]));
    }
    let rank = head[5] as usize;
    if !(1..=3).contains(&rank) {
        return Err(Error::BadRank(rank));
    }
    if head.len() < HEADER_LEN + 4 * rank {
        return Err(Error::TruncatedHeader);
    }
    Ok(head[HEADER_LEN..HEADER_LEN + 4 * rank]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect())
}

/// Parses the file representation produced by [`encode_tensor`].
pub fn decode_tensor(bytes: &[u8], opts: ReadOptions) -> Result<Tensor> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic(Default::default()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedHeader);
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let rank = bytes[5] as usize;
    if !(1..=3).contains(&rank) {
        return Err(Error::BadRank(rank));
    }
    let dims_end = HEADER_LEN + 4 * rank;
    if bytes.len() < dims_end {
        return Err(Error::TruncatedHeader);
    }
    let shape: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected: usize = shape.iter().product();
    let payload = &bytes[dims_end..];
    let found = payload.len() / 4;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    let data: Vec<f32> = payload[..expected * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        if opts.reject_non_finite {
            return Err(Error::NonFinite { index });
        }
        log::warn!("tensor contains non-finite value at flat index {index}");
    }
    Tensor::new(shape, data)
}

/// One image's activations, `height x width x depth`, depth innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(&[height, width, depth], data.len())?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            depth,
            data,
        })
    }

    /// Interprets a rank-3 tensor of shape `[H, W, D]`.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.shape[..] {
            [h, w, d] => Self::new(h, w, d, t.data),
            _ => Err(Error::BadRank(t.shape.len())),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor(read_tensor(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tensor(path, &[self.height, self.width, self.depth], &self.data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Depth vector of spatial cell `(h, w)`.
    pub fn cell(&self, h: usize, w: usize) -> &[f32] {
        let start = (h * self.width + w) * self.depth;
        &self.data[start..start + self.depth]
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_small_cube() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fmap");
        let data: Vec<f32> = (0..8).map(|v| v as f32).collect();
        write_tensor(&path, &[2, 2, 2], &data).unwrap();
        let t = read_tensor(&path).unwrap();
        assert_eq!(t.shape, vec![2, 2, 2]);
        let bits: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);
    }

    #[test]
    fn rank_two_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fmap");
        write_tensor(&path, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = read_tensor(&path).unwrap();
        assert_eq!(t.shape, vec![2, 3]);
        assert_eq!(t.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn file_size_matches_header_plus_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.fmap");
        let data = vec![0.5f32; 8 * 8 * 1280];
        write_tensor(&path, &[8, 8, 1280], &data).unwrap();
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, 8 + 3 * 4 + 4 * 8 * 8 * 1280);
    }

    #[test]
    fn header_bytes_are_exact() {
        let bytes = encode_tensor(&[3], &[1.0, -2.0, 0.25]).unwrap();
        assert_eq!(&bytes[..8], b"FMAP\x01\x01\x00\x00");
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn shape_data_mismatch_rejected() {
        let err = encode_tensor(&[3], &[1.0, 2.0, 3.0, 4.0]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
        assert!(matches!(
            encode_tensor(&[1, 1, 1, 1], &[0.0]).unwrap_err(),
            Error::BadRank(4)
        ));
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fmap");
        let mut bytes = encode_tensor(&[2], &[1.0, 2.0]).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        let err = read_tensor(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut bytes = encode_tensor(&[100], &[1.0; 100]).unwrap();
        bytes.truncate(8 + 4 + 50 * 4);
        match decode_tensor(&bytes, ReadOptions::default()).unwrap_err() {
            Error::Truncated { expected, found } => {
                assert_eq!((expected, found), (100, 50));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unsupported_version_rejected() {
        let mut bytes = encode_tensor(&[1], &[1.0]).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_tensor(&bytes, ReadOptions::default()),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn non_finite_reject_is_configurable() {
        let bytes = encode_tensor(&[2], &[1.0, f32::NAN]).unwrap();
        assert!(matches!(
            decode_tensor(&bytes, ReadOptions::default()),
            Err(Error::NonFinite { index: 1 })
        ));
        let t = decode_tensor(
            &bytes,
            ReadOptions {
                reject_non_finite: false,
            },
        )
        .unwrap();
        assert!(t.data[1].is_nan());
    }

    #[test]
    fn shape_only_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.fmap");
        write_tensor(&path, &[4, 5, 6], &vec![0.0; 120]).unwrap();
        assert_eq!(read_shape(&path).unwrap(), vec![4, 5, 6]);
    }

    #[test]
    fn feature_map_cell_indexing() {
        let data: Vec<f32> = (0..2 * 3 * 4).map(|v| v as f32).collect();
        let fm = FeatureMap::new(2, 3, 4, data).unwrap();
        assert_eq!(fm.cell(1, 2), &[20.0, 21.0, 22.0, 23.0]);
        assert!(FeatureMap::new(1, 1, 2, vec![0.0, f32::INFINITY]).is_err());
    }
}
