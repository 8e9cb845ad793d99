//! Compact global image descriptors from CNN feature maps.
//!
//! A `H x W x D` feature map is cut along its depth into many short
//! descriptors ([`ddr`]), quantized against a K-means vocabulary
//! ([`codebook`]), aggregated into a VLAD vector with residual and Z-score
//! normalization ([`vlad`]), optionally PCA-whitened ([`whitening`]) and
//! finally searched exhaustively ([`retrieval`]) and scored ([`evaluation`]).
//! [`pipeline`] chains the stages over dataset manifests with on-disk caching.

pub mod codebook;
pub mod ddr;
pub mod error;
pub mod evaluation;
pub mod manifest;
pub mod pipeline;
pub mod retrieval;
pub mod synthetic;
pub mod tensor;
pub mod vectors;
pub mod vlad;
pub mod whitening;

pub use codebook::{kmeans_fit, kmeans_pp_init, kmeans_train, Codebook, KMeansFit, KMeansParams};
pub use ddr::{ddr_split, root_square_normalize, Cell, DdrConfig, DescriptorSet};
pub use error::{Error, Result};
pub use evaluation::{average_precision, mean_ap, ukb_score, GroundTruth, MetricReport, Protocol};
pub use manifest::{load_manifest, DatasetManifest, ManifestEntry};
pub use pipeline::{describe_config, run_pipeline, PipelineConfig, PipelineReport};
pub use retrieval::{index_build, search, search_all, Hit, Index, RankedList};
pub use tensor::{read_tensor, write_tensor, FeatureMap, Tensor};
pub use vectors::VectorSet;
pub use vlad::{
    locvlad_encode, vlad_encode, vlad_encode_with, vlad_trace, Encoder, LocVladConfig, Stage,
    VladConfig, VladTrace, VladVector, ZScoreScope,
};
pub use whitening::{whitening_fit, WhiteningModel};
