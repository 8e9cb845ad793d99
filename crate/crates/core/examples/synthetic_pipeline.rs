//! Full pipeline on generated data: vocabulary dataset, evaluation dataset,
//! locVLAD encoding and PCA-whitening, then mAP.
//!
//! ```bash
//! cargo run --release -p ddr-vlad --example synthetic_pipeline
//! ```

use ddr_vlad::evaluation::Protocol;
use ddr_vlad::pipeline::{describe_config, run_pipeline, EncoderKind, PipelineConfig};
use ddr_vlad::synthetic::SyntheticSpec;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let work = tempfile_dir()?;

    let vocab = SyntheticSpec {
        seed: 1,
        ..Default::default()
    }
    .write(&work, "vocab", Protocol::ExcludeQuery)?;
    let eval = SyntheticSpec {
        seed: 2,
        ..Default::default()
    }
    .write(&work, "eval", Protocol::ExcludeQuery)?;

    let mut cfg = PipelineConfig::new(&vocab, &eval);
    cfg.codebook.descriptors.split_factor = 64;
    cfg.codebook.k = 32;
    cfg.pca_dim = Some(64);
    println!("{}", describe_config(&cfg));

    for encoder in [EncoderKind::Vlad, EncoderKind::Locvlad] {
        cfg.encode.encoder = encoder;
        let report = run_pipeline(&cfg, work.join("run"))?;
        println!("{encoder:?}: {} = {:.4}", report.metric, report.value);
    }
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("ddr-vlad-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
