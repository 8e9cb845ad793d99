use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ddr_vlad::evaluation::{GroundTruth, Protocol};
use ddr_vlad::manifest::load_manifest;
use ddr_vlad::pipeline::{
    self, CodebookOptions, DescriptorOptions, EncodeOptions, EncoderKind, Metric, PipelineConfig,
};
use ddr_vlad::retrieval::{search_all, Index};
use ddr_vlad::vectors::VectorSet;
use ddr_vlad::vlad::ZScoreScope;
use ddr_vlad::whitening::WhiteningModel;

#[derive(Parser)]
#[command(name = "ddrvlad", version, about = "Dense-depth VLAD image retrieval")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the K-means vocabulary on a manifest's descriptors.
    TrainCodebook {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        codebook: CodebookArgs,
        #[arg(long)]
        lenient_paths: bool,
    },
    /// Encode every image of a manifest; writes database.fmap and queries.fmap.
    Encode {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        descriptors: DescriptorArgs,
        #[command(flatten)]
        encode: EncodeArgs,
        #[arg(long)]
        lenient_paths: bool,
    },
    /// Fit PCA-whitening on encoded vectors.
    TrainPca {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = ddr_vlad::whitening::DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a search index from encoded (optionally whitened) vectors.
    BuildIndex {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the database for every query vector; prints JSON lines.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        exclude_self: bool,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score rankings against a manifest's classes.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        #[arg(long, value_enum)]
        protocol: Option<ProtocolArg>,
        /// Directory for evaluation.json and per_query.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage with caching in a run directory.
    Run(RunArgs),
    /// Print the effective configuration of `run`.
    Describe(RunArgs),
}

#[derive(Args, Clone)]
struct DescriptorArgs {
    #[arg(long, default_value_t = ddr_vlad::ddr::DEFAULT_SPLIT_FACTOR)]
    split_factor: usize,
    /// One descriptor per spatial cell (whole depth vector).
    #[arg(long)]
    no_ddr: bool,
    #[arg(long)]
    no_root_square: bool,
}

impl DescriptorArgs {
    fn options(&self) -> DescriptorOptions {
        DescriptorOptions {
            split_factor: self.split_factor,
            ddr: !self.no_ddr,
            root_square: !self.no_root_square,
        }
    }
}

#[derive(Args, Clone)]
struct CodebookArgs {
    #[command(flatten)]
    descriptors: DescriptorArgs,
    #[arg(long = "k", default_value_t = ddr_vlad::codebook::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ddr_vlad::codebook::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    #[arg(long, default_value_t = ddr_vlad::codebook::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = ddr_vlad::codebook::DEFAULT_MAX_POOL)]
    max_pool: usize,
}

impl CodebookArgs {
    fn options(&self) -> CodebookOptions {
        CodebookOptions {
            descriptors: self.descriptors.options(),
            k: self.k,
            seed: self.seed,
            max_iters: self.max_iters,
            tol: self.tol,
            max_pool: self.max_pool,
        }
    }
}

#[derive(Args, Clone)]
struct EncodeArgs {
    #[arg(long, value_enum, default_value_t = EncoderArg::Locvlad)]
    encoder: EncoderArg,
    #[arg(long, default_value_t = ddr_vlad::vlad::DEFAULT_CENTRAL_FRACTION)]
    central_fraction: f64,
    /// Apply locVLAD to database images as well.
    #[arg(long)]
    locvlad_database: bool,
    #[arg(long, value_enum, default_value_t = ScopeArg::Global)]
    zscore_scope: ScopeArg,
}

impl EncodeArgs {
    fn options(&self) -> EncodeOptions {
        EncodeOptions {
            encoder: match self.encoder {
                EncoderArg::Vlad => EncoderKind::Vlad,
                EncoderArg::Locvlad => EncoderKind::Locvlad,
            },
            central_fraction: self.central_fraction,
            queries_only: !self.locvlad_database,
            zscore_scope: match self.zscore_scope {
                ScopeArg::Global => ZScoreScope::Global,
                ScopeArg::PerWord => ZScoreScope::PerWord,
            },
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    vocab_manifest: PathBuf,
    #[arg(long)]
    eval_manifest: PathBuf,
    #[arg(long, default_value = "runs")]
    run_dir: PathBuf,
    #[command(flatten)]
    codebook: CodebookArgs,
    #[command(flatten)]
    encode: EncodeArgs,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long, default_value_t = ddr_vlad::whitening::DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    allow_same_dataset: bool,
    #[arg(long)]
    lenient_paths: bool,
}

impl RunArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            codebook: self.codebook.options(),
            encode: self.encode.options(),
            pca_dim: self.pca_dim,
            ridge: self.ridge,
            vocabulary_manifest: self.vocab_manifest.clone(),
            eval_manifest: self.eval_manifest.clone(),
            protocol: self.protocol.map(Into::into),
            metric: self.metric.map(Into::into),
            top_k: self.top_k,
            allow_same_dataset: self.allow_same_dataset,
            strict_paths: !self.lenient_paths,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderArg {
    Vlad,
    Locvlad,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Global,
    PerWord,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Map,
    Ukb,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Map => Metric::Map,
            MetricArg::Ukb => Metric::Ukb,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    ExcludeQuery,
    IncludeQuery,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::ExcludeQuery => Protocol::ExcludeQuery,
            ProtocolArg::IncludeQuery => Protocol::IncludeQuery,
        }
    }
}

fn maybe_whiten(set: VectorSet, pca: Option<&Path>) -> anyhow::Result<VectorSet> {
    match pca {
        None => Ok(set),
        Some(dir) => {
            let model = WhiteningModel::load(dir)?;
            Ok(pipeline::whiten(&model, &set)?)
        }
    }
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::TrainCodebook {
            manifest,
            out,
            codebook,
            lenient_paths,
        } => {
            let m = load_manifest(&manifest, !lenient_paths)?;
            let fit = pipeline::train_codebook(&m, &codebook.options())?;
            fit.codebook.save(&out)?;
            eprintln!(
                "codebook K={} d={} after {} iterations (objective {:.6})",
                fit.codebook.k(),
                fit.codebook.dim(),
                fit.iterations,
                fit.objectives.last().copied().unwrap_or_default()
            );
        }
        Cmd::Encode {
            manifest,
            codebook,
            out,
            descriptors,
            encode,
            lenient_paths,
        } => {
            let m = load_manifest(&manifest, !lenient_paths)?;
            let cb = ddr_vlad::Codebook::load(&codebook)?;
            if cb.trained_on() == m.dataset_name {
                log::warn!(
                    "codebook was trained on the dataset being encoded ({})",
                    m.dataset_name
                );
            }
            let enc =
                pipeline::encode_dataset(&m, &cb, &descriptors.options(), &encode.options(), true)?;
            std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            enc.database.save(out.join("database.fmap"))?;
            if let Some(q) = enc.queries.filter(|q| !q.is_empty()) {
                q.save(out.join("queries.fmap"))?;
            }
        }
        Cmd::TrainPca {
            vectors,
            dim,
            ridge,
            out,
        } => {
            let set = VectorSet::load(&vectors)?;
            let name = set.config["dataset"]
                .as_str()
                .unwrap_or_default()
                .to_owned();
            pipeline::train_pca(&set, dim, ridge, &name)?.save(&out)?;
        }
        Cmd::BuildIndex { vectors, pca, out } => {
            let set = maybe_whiten(VectorSet::load(&vectors)?, pca.as_deref())?;
            Index::from_vectors(&set)?.save(&out)?;
        }
        Cmd::Query {
            index,
            vectors,
            pca,
            top_k,
            exclude_self,
            out,
        } => {
            let idx = Index::load(&index)?;
            let queries = maybe_whiten(VectorSet::load(&vectors)?, pca.as_deref())?;
            let rankings = search_all(&idx, &queries, top_k, exclude_self)?;
            match out {
                Some(path) => pipeline::write_rankings(&path, &rankings)?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    pipeline::write_rankings_to(&mut lock, &rankings)?;
                    lock.flush()?;
                }
            }
        }
        Cmd::Evaluate {
            manifest,
            rankings,
            metric,
            protocol,
            out,
        } => {
            let mut m = load_manifest(&manifest, false)?;
            if let Some(p) = protocol {
                m.protocol = p.into();
            }
            let gt = GroundTruth::from_manifest(&m)?;
            let metric = metric.map(Into::into).unwrap_or(match m.protocol {
                Protocol::IncludeQuery => Metric::Ukb,
                Protocol::ExcludeQuery => Metric::Map,
            });
            let ranked = pipeline::read_rankings(&rankings)?;
            let report = pipeline::evaluate(&m.dataset_name, &ranked, &gt, metric)?;
            std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            report.write_json(out.join("evaluation.json"))?;
            report.write_csv(out.join("per_query.csv"))?;
            println!("{} {} = {:.4}", report.dataset, report.metric, report.value);
        }
        Cmd::Run(args) => {
            let report = pipeline::run_pipeline(&args.config(), &args.run_dir)?;
            print!("{}", report.to_json());
        }
        Cmd::Describe(args) => print!("{}", pipeline::describe_config(&args.config())),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| run(cli.cmd))),
        None => run(cli.cmd),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
