use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u8),

    #[error("tensor rank {0} outside 1..=3")]
    BadRank(usize),

    #[error("truncated tensor payload: header declares {expected} values, {found} present")]
    Truncated { expected: usize, found: usize },

    #[error("truncated tensor header")]
    TruncatedHeader,

    #[error("shape {shape:?} holds {expected} values but data has {found}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("duplicate image id {0:?}")]
    DuplicateId(String),

    #[error("tensor path {path} for image {image_id:?} does not resolve to a readable file")]
    DanglingPath { image_id: String, path: PathBuf },

    #[error("depth {depth} is not divisible by split factor {split_factor}")]
    NotDivisible { depth: usize, split_factor: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty descriptor set")]
    EmptyDescriptors,

    #[error("cannot pick {k} centroids from {n} points")]
    InsufficientPoints { n: usize, k: usize },

    #[error("only {distinct} distinct points available for {k} centroids")]
    DegenerateInit { distinct: usize, k: usize },

    #[error("whitening to {p} dims needs at least {} samples, got {n}", p + 1)]
    InsufficientSamples { n: usize, p: usize },

    #[error("requested {requested} whitening components but usable rank is {usable}")]
    RankDeficient { usable: usize, requested: usize },

    #[error("query {0:?} has no relevant images")]
    EmptyRelevant(String),

    #[error("ranking for query {0:?} is empty")]
    EmptyRanking(String),

    #[error("no ground truth for query {0:?}")]
    MissingGroundTruth(String),

    #[error("ukb score needs at least 4 results per query, query {query_id:?} has {found}")]
    TooFewResults { query_id: String, found: usize },

    #[error("vector for {image_id:?} is not unit-norm (norm {norm})")]
    NotUnitNorm { image_id: String, norm: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("stage {stage}{}", image_id.as_ref().map(|id| format!(" (image {id:?})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        image_id: Option<String>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, image_id: Option<&str>) -> Self {
        Error::Stage {
            stage,
            image_id: image_id.map(str::to_owned),
            source: Box::new(self),
        }
    }
}
