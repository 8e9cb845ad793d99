//! End-to-end orchestration: train-codebook, encode, train-pca, build-index,
//! query and evaluate.
//!
//! Every stage artifact lands in a run directory under a name derived from a
//! SHA-256 of the stage's inputs (file contents) and configuration. A stage
//! whose directory is complete is loaded instead of recomputed. Freshly
//! computed artifacts are also read back from disk, so a first run and a
//! cached re-run see identical (f32-rounded) values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::codebook::{
    self, kmeans_fit, Codebook, KMeansParams, DEFAULT_K, DEFAULT_MAX_ITERS, DEFAULT_MAX_POOL,
    DEFAULT_TOL,
};
use crate::ddr::{DdrConfig, DescriptorSet, DEFAULT_SPLIT_FACTOR};
use crate::error::{Error, Result};
use crate::evaluation::{mean_ap, ukb_score, GroundTruth, MetricReport, Protocol};
use crate::manifest::{load_manifest, DatasetManifest};
use crate::retrieval::{search_all, Index, RankedList};
use crate::tensor::{read_shape, write_json};
use crate::vectors::VectorSet;
use crate::vlad::{Encoder, LocVladConfig, VladConfig, ZScoreScope, DEFAULT_CENTRAL_FRACTION};
use crate::whitening::{whitening_fit, WhiteningModel, DEFAULT_RIDGE};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Vlad,
    #[default]
    Locvlad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Map,
    Ukb,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Map => "mAP",
            Metric::Ukb => "ukb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorOptions {
    pub split_factor: usize,
    /// When false every cell's whole depth vector is one descriptor.
    pub ddr: bool,
    pub root_square: bool,
}

impl Default for DescriptorOptions {
    fn default() -> Self {
        Self {
            split_factor: DEFAULT_SPLIT_FACTOR,
            ddr: true,
            root_square: true,
        }
    }
}

impl DescriptorOptions {
    pub fn ddr_config(&self, depth: usize) -> Result<DdrConfig> {
        let split = if self.ddr { self.split_factor } else { depth };
        DdrConfig::new(split, self.root_square)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookOptions {
    pub descriptors: DescriptorOptions,
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub max_pool: usize,
}

impl Default for CodebookOptions {
    fn default() -> Self {
        Self {
            descriptors: DescriptorOptions::default(),
            k: DEFAULT_K,
            seed: 0,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            max_pool: DEFAULT_MAX_POOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub encoder: EncoderKind,
    pub central_fraction: f64,
    pub queries_only: bool,
    pub zscore_scope: ZScoreScope,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::default(),
            central_fraction: DEFAULT_CENTRAL_FRACTION,
            queries_only: true,
            zscore_scope: ZScoreScope::Global,
        }
    }
}

impl EncodeOptions {
    pub fn encoder<'a>(&self, codebook: &'a Codebook, ddr: DdrConfig) -> Result<Encoder<'a>> {
        let mut enc = Encoder::new(codebook, ddr).with_vlad_config(VladConfig {
            zscore_scope: self.zscore_scope,
        });
        if self.encoder == EncoderKind::Locvlad {
            enc = enc.with_locvlad(LocVladConfig::new(
                self.central_fraction,
                self.queries_only,
            )?);
        }
        Ok(enc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub codebook: CodebookOptions,
    pub encode: EncodeOptions,
    pub pca_dim: Option<usize>,
    pub ridge: f64,
    pub vocabulary_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    /// Overrides the evaluation manifest's protocol.
    pub protocol: Option<Protocol>,
    /// Defaults to UKB score under `include_query`, mAP otherwise.
    pub metric: Option<Metric>,
    pub top_k: Option<usize>,
    pub allow_same_dataset: bool,
    pub strict_paths: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            codebook: CodebookOptions::default(),
            encode: EncodeOptions::default(),
            pca_dim: None,
            ridge: DEFAULT_RIDGE,
            vocabulary_manifest: PathBuf::new(),
            eval_manifest: PathBuf::new(),
            protocol: None,
            metric: None,
            top_k: None,
            allow_same_dataset: false,
            strict_paths: true,
        }
    }
}

impl PipelineConfig {
    pub fn new(vocabulary_manifest: impl Into<PathBuf>, eval_manifest: impl Into<PathBuf>) -> Self {
        Self {
            vocabulary_manifest: vocabulary_manifest.into(),
            eval_manifest: eval_manifest.into(),
            ..Default::default()
        }
    }

    fn resolved_metric(&self, protocol: Protocol) -> Metric {
        self.metric.unwrap_or(match protocol {
            Protocol::IncludeQuery => Metric::Ukb,
            Protocol::ExcludeQuery => Metric::Map,
        })
    }

    /// Configuration without file paths, as recorded in reports.
    fn portable(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("vocabulary_manifest");
            map.remove("eval_manifest");
        }
        v
    }
}

/// Human-readable listing of every knob, its default and where the default comes from.
pub fn describe_config(cfg: &PipelineConfig) -> String {
    let cb = &cfg.codebook;
    let d = &cb.descriptors;
    let e = &cfg.encode;
    let mut out = String::new();
    let mut line = |name: &str, value: String, note: &str| {
        let _ = writeln!(out, "{name:<20} {value:<14} {note}");
    };
    line(
        "ddr",
        d.ddr.to_string(),
        "default true (reference setting); false keeps one descriptor per cell",
    );
    line(
        "split_factor",
        if d.ddr {
            d.split_factor.to_string()
        } else {
            "depth".into()
        },
        "default 128 (reference setting), descriptor dimension after depth splitting",
    );
    line(
        "root_square",
        d.root_square.to_string(),
        "default true (reference setting), L1 then signed square root per descriptor",
    );
    line(
        "K",
        cb.k.to_string(),
        "default K=100 visual words (reference setting), K-means++ seeded",
    );
    line(
        "seed",
        cb.seed.to_string(),
        "default 0 (implementation default)",
    );
    line(
        "max_iters",
        cb.max_iters.to_string(),
        "default 100 (implementation default)",
    );
    line(
        "tol",
        cb.tol.to_string(),
        "default 1e-4 (implementation default)",
    );
    line(
        "max_pool",
        cb.max_pool.to_string(),
        "default 2000000 training descriptors (implementation default)",
    );
    let enc_note = match e.encoder {
        EncoderKind::Vlad => "plain VLAD for every image".to_string(),
        EncoderKind::Locvlad if e.queries_only => {
            "locVLAD on query images only; database images use plain VLAD (reference setting)"
                .to_string()
        }
        EncoderKind::Locvlad => "locVLAD on every image, queries and database".to_string(),
    };
    line(
        "encoder",
        serde_json::to_value(e.encoder)
            .unwrap()
            .as_str()
            .unwrap_or("")
            .into(),
        &enc_note,
    );
    line(
        "central_fraction",
        e.central_fraction.to_string(),
        "default 0.75 of each axis, centered (implementation default)",
    );
    line(
        "zscore_scope",
        serde_json::to_value(e.zscore_scope)
            .unwrap()
            .as_str()
            .unwrap_or("")
            .into(),
        "default global: one mean/std over the whole vector (reference reading)",
    );
    match cfg.pca_dim {
        Some(p) => line(
            "pca_dim",
            p.to_string(),
            "PCA-whitening target; 128 is the reference setting, 256/512 also reported",
        ),
        None => line("pca_dim", "none".into(), "no whitening"),
    }
    line(
        "ridge",
        cfg.ridge.to_string(),
        "default 1e-9 added to eigenvalues (implementation default)",
    );
    line(
        "vocabulary",
        cfg.vocabulary_manifest.display().to_string(),
        "must differ from the evaluation dataset (cross-dataset vocabulary)",
    );
    line("evaluation", cfg.eval_manifest.display().to_string(), "");
    line(
        "protocol",
        cfg.protocol
            .map(|p| {
                serde_json::to_value(p)
                    .unwrap()
                    .as_str()
                    .unwrap_or("")
                    .to_string()
            })
            .unwrap_or_else(|| "manifest".into()),
        "exclude_query for Holidays/Oxford/Paris, include_query for UKB",
    );
    line(
        "metric",
        cfg.metric
            .map(|m| m.label().to_string())
            .unwrap_or_else(|| "auto".into()),
        "mAP, or UKB top-4 score under include_query",
    );
    line(
        "top_k",
        cfg.top_k
            .map(|k| k.to_string())
            .unwrap_or_else(|| "all".into()),
        "ranking length per query",
    );
    out
}

/// Depth shared by every feature map of a manifest.
fn common_depth(shapes: &[Vec<usize>], m: &DatasetManifest) -> Result<usize> {
    let mut depth = None;
    for (shape, e) in shapes.iter().zip(&m.entries) {
        let d = match shape[..] {
            [_, _, d] => d,
            _ => return Err(Error::BadRank(shape.len()).in_stage("load", Some(&e.image_id))),
        };
        match depth {
            None => depth = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::DimensionMismatch {
                    expected: prev,
                    found: d,
                }
                .in_stage("load", Some(&e.image_id)))
            }
            _ => {}
        }
    }
    depth.ok_or_else(|| Error::InvalidConfig(format!("manifest {:?} is empty", m.dataset_name)))
}

fn manifest_shapes(m: &DatasetManifest) -> Result<Vec<Vec<usize>>> {
    m.entries
        .par_iter()
        .map(|e| read_shape(m.resolve(e)).map_err(|err| err.in_stage("load", Some(&e.image_id))))
        .collect()
}

/// Trains a vocabulary on every descriptor of a manifest (subsampled past `max_pool`).
pub fn train_codebook(m: &DatasetManifest, opts: &CodebookOptions) -> Result<codebook::KMeansFit> {
    let shapes = manifest_shapes(m)?;
    let depth = common_depth(&shapes, m)?;
    let ddr = opts.descriptors.ddr_config(depth)?;
    if depth % ddr.split_factor != 0 {
        return Err(Error::NotDivisible {
            depth,
            split_factor: ddr.split_factor,
        });
    }
    let counts: Vec<usize> = shapes
        .iter()
        .map(|s| s[0] * s[1] * (depth / ddr.split_factor))
        .collect();
    let total: usize = counts.iter().sum();

    // Per-image sorted local indices to keep; None keeps everything.
    let mut keep: Vec<Option<Vec<usize>>> = vec![None; m.entries.len()];
    if total > opts.max_pool {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picked = rand::seq::index::sample(&mut rng, total, opts.max_pool).into_vec();
        picked.sort_unstable();
        let mut offsets = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for &c in &counts {
            offsets.push(acc);
            acc += c;
        }
        keep.iter_mut().for_each(|k| *k = Some(Vec::new()));
        let mut img = 0;
        for g in picked {
            while g >= offsets[img] + counts[img] {
                img += 1;
            }
            keep[img].as_mut().unwrap().push(g - offsets[img]);
        }
        log::info!("subsampled {total} descriptors to {}", opts.max_pool);
    }

    let sets: Vec<DescriptorSet> = m
        .entries
        .par_iter()
        .zip(&keep)
        .map(|(e, keep)| {
            let tag = |err: Error| err.in_stage("train-codebook", Some(&e.image_id));
            let fm = m.load_feature_map(e).map_err(tag)?;
            let ds = ddr.describe(&fm).map_err(tag)?;
            Ok(match keep {
                None => ds,
                Some(idx) => {
                    let mut rows = Vec::with_capacity(idx.len() * ds.dim());
                    for &i in idx {
                        rows.extend_from_slice(ds.row(i));
                    }
                    DescriptorSet::new(ds.dim(), rows).map_err(tag)?
                }
            })
        })
        .collect::<Result<_>>()?;
    let pool = DescriptorSet::concat(&sets)?;
    log::info!(
        "training K={} on {} descriptors of dim {}",
        opts.k,
        pool.len(),
        pool.dim()
    );
    let params = KMeansParams {
        k: opts.k,
        seed: opts.seed,
        max_iters: opts.max_iters,
        tol: opts.tol,
    };
    let mut fit = kmeans_fit(&pool, &params).map_err(|e| e.in_stage("train-codebook", None))?;
    fit.codebook = fit.codebook.with_trained_on(&m.dataset_name);
    Ok(fit)
}

/// Database vectors for every entry and, optionally, query vectors for query entries.
#[derive(Debug, Clone)]
pub struct EncodedDataset {
    pub database: VectorSet,
    pub queries: Option<VectorSet>,
}

pub fn encode_dataset(
    m: &DatasetManifest,
    cb: &Codebook,
    descriptors: &DescriptorOptions,
    opts: &EncodeOptions,
    with_queries: bool,
) -> Result<EncodedDataset> {
    let shapes = manifest_shapes(m)?;
    let depth = common_depth(&shapes, m)?;
    let ddr = descriptors.ddr_config(depth)?;
    if ddr.split_factor != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            found: ddr.split_factor,
        }
        .in_stage("encode", None));
    }
    let encoder = opts.encoder(cb, ddr)?;
    let separate_queries = encoder.uses_locvlad(true) != encoder.uses_locvlad(false);

    let encoded: Vec<(Vec<f64>, Option<Vec<f64>>)> = m
        .entries
        .par_iter()
        .map(|e| {
            let tag = |err: Error| err.in_stage("encode", Some(&e.image_id));
            let fm = m.load_feature_map(e).map_err(tag)?;
            let db = encoder.encode(&fm, false).map_err(tag)?;
            if db.degenerate {
                log::warn!("image {:?} encodes to a degenerate vector", e.image_id);
            }
            let q = if with_queries && e.is_query && separate_queries {
                Some(encoder.encode(&fm, true).map_err(tag)?.values)
            } else {
                None
            };
            Ok((db.values, q))
        })
        .collect::<Result<_>>()?;

    let config = |role: &str| {
        json!({
            "role": role,
            "dataset": m.dataset_name,
            "codebook": {"k": cb.k(), "d": cb.dim(), "trained_on": cb.trained_on(), "seed": cb.seed()},
            "descriptors": descriptors,
            "encode": opts,
        })
    };
    let dim = cb.k() * cb.dim();
    let mut database = VectorSet::new(dim, config("database"));
    let mut queries = with_queries.then(|| VectorSet::new(dim, config("query")));
    for (e, (db, q)) in m.entries.iter().zip(&encoded) {
        database.push(&e.image_id, db)?;
        if let (Some(qs), true) = (queries.as_mut(), e.is_query) {
            qs.push(&e.image_id, q.as_deref().unwrap_or(db))?;
        }
    }
    Ok(EncodedDataset { database, queries })
}

pub fn train_pca(
    vectors: &VectorSet,
    output_dim: usize,
    ridge: f64,
    trained_on: &str,
) -> Result<WhiteningModel> {
    whitening_fit(&vectors.values, vectors.dim, output_dim, ridge)
        .map(|m| m.with_trained_on(trained_on))
        .map_err(|e| e.in_stage("train-pca", None))
}

/// Whitens and renormalizes every row.
pub fn whiten(model: &WhiteningModel, set: &VectorSet) -> Result<VectorSet> {
    let mut config = set.config.clone();
    if let Some(map) = config.as_object_mut() {
        map.insert(
            "whitening".into(),
            json!({"output_dim": model.output_dim(), "ridge": model.ridge(), "trained_on": model.trained_on()}),
        );
    }
    let rows: Vec<Vec<f64>> = set
        .values
        .par_chunks_exact(set.dim)
        .zip(&set.ids)
        .map(|(v, id)| {
            let (y, degenerate) = model
                .apply_slice(v)
                .map_err(|e| e.in_stage("whiten", Some(id)))?;
            if degenerate {
                log::warn!("image {id:?} whitens to a degenerate vector");
            }
            Ok(y)
        })
        .collect::<Result<_>>()?;
    let mut out = VectorSet::new(model.output_dim(), config);
    for (id, y) in set.ids.iter().zip(&rows) {
        out.push(id, y)?;
    }
    Ok(out)
}

pub fn write_rankings(path: impl AsRef<Path>, rankings: &[RankedList]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_rankings_to(&mut w, rankings).map_err(|e| Error::io(path, e))
}

pub fn write_rankings_to(w: &mut impl Write, rankings: &[RankedList]) -> std::io::Result<()> {
    for r in rankings {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_rankings(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub metric: String,
    pub value: f64,
    pub per_query: BTreeMap<String, f64>,
}

pub fn evaluate(
    dataset: &str,
    rankings: &[RankedList],
    gt: &GroundTruth,
    metric: Metric,
) -> Result<EvaluationReport> {
    let MetricReport { value, per_query } = match metric {
        Metric::Map => mean_ap(rankings, gt),
        Metric::Ukb => ukb_score(rankings, gt),
    }
    .map_err(|e| e.in_stage("evaluate", None))?;
    Ok(EvaluationReport {
        dataset: dataset.to_owned(),
        metric: metric.label().to_owned(),
        value,
        per_query,
    })
}

impl EvaluationReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["query_id", self.metric.as_str()])
            .map_err(csv_err)?;
        for (q, v) in &self.per_query {
            w.write_record([q.as_str(), &v.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub dataset: String,
    pub vocabulary: String,
    pub metric: String,
    pub value: f64,
    pub per_query: BTreeMap<String, f64>,
    pub whitened_dim: Option<usize>,
    pub cache_key: String,
    pub config: serde_json::Value,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_json(v: &serde_json::Value) -> String {
    hex(&Sha256::digest(
        serde_json::to_vec(v).expect("json serializes"),
    ))
}

/// Content digest of a manifest and every tensor it references.
pub fn dataset_digest(m: &DatasetManifest) -> Result<String> {
    let file_hashes: Vec<Vec<u8>> = m
        .entries
        .par_iter()
        .map(|e| {
            let p = m.resolve(e);
            let bytes = std::fs::read(&p).map_err(|err| Error::io(&p, err))?;
            Ok(Sha256::digest(&bytes).to_vec())
        })
        .collect::<Result<_>>()?;
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(m).expect("manifest serializes"));
    for fh in file_hashes {
        h.update(fh);
    }
    Ok(hex(&h.finalize()))
}

/// Runs `compute` into a scratch directory unless `dir` is already complete,
/// then loads the artifact from `dir`.
fn cached<T>(
    dir: &Path,
    compute: impl FnOnce(&Path) -> Result<()>,
    load: impl FnOnce(&Path) -> Result<T>,
) -> Result<T> {
    let marker = dir.join(".complete");
    if marker.is_file() {
        log::info!("reusing {}", dir.display());
    } else {
        log::info!("computing {}", dir.display());
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        compute(&tmp)?;
        std::fs::write(tmp.join(".complete"), b"").map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    }
    load(dir)
}

fn stage_dir(run_dir: &Path, stage: &str, key: &str) -> PathBuf {
    run_dir.join(format!("{stage}-{}", &key[..16]))
}

/// Cache keys of every stage for one configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKeys {
    pub codebook: String,
    pub vocabulary_vectors: String,
    pub eval_vectors: String,
    pub pca: Option<String>,
    pub report: String,
}

pub fn cache_keys(cfg: &PipelineConfig, vocab_digest: &str, eval_digest: &str) -> CacheKeys {
    let codebook = hash_json(&json!({
        "stage": "codebook", "data": vocab_digest, "options": cfg.codebook,
    }));
    let encode = |data: &str, queries: bool| {
        hash_json(&json!({
            "stage": "encode", "codebook": codebook, "data": data,
            "descriptors": cfg.codebook.descriptors, "options": cfg.encode, "queries": queries,
        }))
    };
    let vocabulary_vectors = encode(vocab_digest, false);
    let eval_vectors = encode(eval_digest, true);
    let pca = cfg.pca_dim.map(|p| {
        hash_json(&json!({
            "stage": "pca", "vectors": vocabulary_vectors, "dim": p, "ridge": cfg.ridge,
        }))
    });
    let report = hash_json(&json!({
        "stage": "report", "config": cfg.portable(), "vocabulary": vocab_digest, "eval": eval_digest,
    }));
    CacheKeys {
        codebook,
        vocabulary_vectors,
        eval_vectors,
        pca,
        report,
    }
}

/// Loads the vocabulary and evaluation manifests and applies the cross-dataset rule.
pub fn load_pipeline_manifests(cfg: &PipelineConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    let vocab = load_manifest(&cfg.vocabulary_manifest, cfg.strict_paths)
        .map_err(|e| e.in_stage("load", None))?;
    let mut eval = load_manifest(&cfg.eval_manifest, cfg.strict_paths)
        .map_err(|e| e.in_stage("load", None))?;
    if let Some(p) = cfg.protocol {
        eval.protocol = p;
    }
    eval.require_queries()
        .map_err(|e| e.in_stage("load", None))?;
    if vocab.dataset_name == eval.dataset_name {
        if !cfg.allow_same_dataset {
            return Err(Error::InvalidConfig(format!(
                "vocabulary and evaluation both use dataset {:?}; pass allow_same_dataset to override",
                eval.dataset_name
            ))
            .in_stage("load", None));
        }
        log::warn!(
            "vocabulary is trained on the evaluation dataset {:?}",
            eval.dataset_name
        );
    }
    Ok((vocab, eval))
}

/// Runs every stage, reusing complete artifacts in `run_dir`, and writes
/// `report-<key>.json`, a per-query CSV and the rankings next to them.
pub fn run_pipeline(cfg: &PipelineConfig, run_dir: impl AsRef<Path>) -> Result<PipelineReport> {
    let run_dir = run_dir.as_ref();
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let (vocab, eval) = load_pipeline_manifests(cfg)?;
    let vocab_digest = dataset_digest(&vocab).map_err(|e| e.in_stage("load", None))?;
    let eval_digest = dataset_digest(&eval).map_err(|e| e.in_stage("load", None))?;
    let keys = cache_keys(cfg, &vocab_digest, &eval_digest);

    let cb = cached(
        &stage_dir(run_dir, "codebook", &keys.codebook),
        |dir| train_codebook(&vocab, &cfg.codebook)?.codebook.save(dir),
        |d| Codebook::load(d),
    )?;

    let eval_vectors = cached(
        &stage_dir(run_dir, "encode", &keys.eval_vectors),
        |dir| {
            let enc = encode_dataset(&eval, &cb, &cfg.codebook.descriptors, &cfg.encode, true)?;
            enc.database.save(dir.join("database.fmap"))?;
            enc.queries
                .expect("queries requested")
                .save(dir.join("queries.fmap"))
        },
        |dir| {
            Ok((
                VectorSet::load(dir.join("database.fmap"))?,
                VectorSet::load(dir.join("queries.fmap"))?,
            ))
        },
    )?;
    let (mut database, mut queries) = eval_vectors;

    if let (Some(p), Some(pca_key)) = (cfg.pca_dim, keys.pca.as_ref()) {
        let vocab_vectors = cached(
            &stage_dir(run_dir, "encode", &keys.vocabulary_vectors),
            |dir| {
                encode_dataset(&vocab, &cb, &cfg.codebook.descriptors, &cfg.encode, false)?
                    .database
                    .save(dir.join("database.fmap"))
            },
            |dir| VectorSet::load(dir.join("database.fmap")),
        )?;
        let model = cached(
            &stage_dir(run_dir, "pca", pca_key),
            |dir| train_pca(&vocab_vectors, p, cfg.ridge, &vocab.dataset_name)?.save(dir),
            |d| WhiteningModel::load(d),
        )?;
        database = whiten(&model, &database)?;
        queries = whiten(&model, &queries)?;
    }

    let index = Index::from_vectors(&database).map_err(|e| e.in_stage("build-index", None))?;
    let exclude_self = eval.protocol == Protocol::ExcludeQuery;
    let rankings = search_all(&index, &queries, cfg.top_k, exclude_self)?;
    let gt = GroundTruth::from_manifest(&eval).map_err(|e| e.in_stage("evaluate", None))?;
    let metric = cfg.resolved_metric(eval.protocol);
    let evaluation = evaluate(&eval.dataset_name, &rankings, &gt, metric)?;

    let tag = &keys.report[..16];
    write_rankings(run_dir.join(format!("rankings-{tag}.jsonl")), &rankings)?;
    evaluation.write_csv(run_dir.join(format!("per_query-{tag}.csv")))?;
    let report = PipelineReport {
        dataset: eval.dataset_name.clone(),
        vocabulary: vocab.dataset_name.clone(),
        metric: evaluation.metric,
        value: evaluation.value,
        per_query: evaluation.per_query,
        whitened_dim: cfg.pca_dim,
        cache_key: keys.report.clone(),
        config: cfg.portable(),
    };
    let path = run_dir.join(format!("report-{tag}.json"));
    std::fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn describe_default_config() {
        let text = describe_config(&PipelineConfig::default());
        assert!(text.contains("K=100"));
        assert!(text.contains("no whitening"));
        assert!(text.contains("query images only"));
        let vlad = PipelineConfig {
            encode: EncodeOptions {
                encoder: EncoderKind::Vlad,
                ..Default::default()
            },
            pca_dim: Some(128),
            ..Default::default()
        };
        let text = describe_config(&vlad);
        assert!(text.contains("plain VLAD"));
        assert!(!text.contains("no whitening"));
    }

    #[test]
    fn ddr_off_uses_whole_depth() {
        let opts = DescriptorOptions {
            ddr: false,
            ..Default::default()
        };
        assert_eq!(opts.ddr_config(1280).unwrap().split_factor, 1280);
        assert_eq!(
            DescriptorOptions::default()
                .ddr_config(1280)
                .unwrap()
                .split_factor,
            128
        );
    }

    #[test]
    fn every_field_changes_report_key() {
        let base = PipelineConfig::new("v.json", "e.json");
        let k0 = cache_keys(&base, "a", "b").report;
        let mut variants = Vec::new();
        let mut push = |f: &dyn Fn(&mut PipelineConfig)| {
            let mut c = base.clone();
            f(&mut c);
            variants.push(c);
        };
        push(&|c| c.codebook.descriptors.split_factor = 64);
        push(&|c| c.codebook.descriptors.ddr = false);
        push(&|c| c.codebook.descriptors.root_square = false);
        push(&|c| c.codebook.k = 32);
        push(&|c| c.codebook.seed = 1);
        push(&|c| c.codebook.max_iters = 5);
        push(&|c| c.codebook.tol = 1e-3);
        push(&|c| c.codebook.max_pool = 10);
        push(&|c| c.encode.encoder = EncoderKind::Vlad);
        push(&|c| c.encode.central_fraction = 0.5);
        push(&|c| c.encode.queries_only = false);
        push(&|c| c.encode.zscore_scope = ZScoreScope::PerWord);
        push(&|c| c.pca_dim = Some(128));
        push(&|c| c.ridge = 0.0);
        push(&|c| c.protocol = Some(Protocol::IncludeQuery));
        push(&|c| c.metric = Some(Metric::Ukb));
        push(&|c| c.top_k = Some(10));
        push(&|c| c.allow_same_dataset = true);
        push(&|c| c.strict_paths = false);
        for v in &variants {
            assert_ne!(cache_keys(v, "a", "b").report, k0, "{v:?}");
        }
        assert_ne!(cache_keys(&base, "a", "c").report, k0);
        assert_eq!(cache_keys(&base, "a", "b").report, k0);
    }

    #[test]
    fn codebook_key_ignores_encoding_options() {
        let base = PipelineConfig::default();
        let mut other = base.clone();
        other.encode.encoder = EncoderKind::Vlad;
        other.pca_dim = Some(64);
        assert_eq!(
            cache_keys(&base, "a", "b").codebook,
            cache_keys(&other, "a", "b").codebook
        );
    }
}
