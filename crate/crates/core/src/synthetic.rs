//! Synthetic datasets with known class structure.
//!
//! Each class owns a source feature map whose cells are drawn once from a
//! half-normal of scale `separation`. Every image of the class is its source
//! plus independent Gaussian noise of scale `sigma_within`, clamped at zero
//! like ReLU activations. The first image of each class is the query.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::Protocol;
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub sigma_within: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 20,
            per_class: 5,
            height: 8,
            width: 8,
            depth: 256,
            sigma_within: 0.1,
            separation: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticImage {
    pub image_id: String,
    pub class_id: String,
    pub is_query: bool,
    pub map: FeatureMap,
}

fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((a << 32) | b);
    rng
}

impl SyntheticSpec {
    fn cells(&self) -> usize {
        self.height * self.width * self.depth
    }

    pub fn generate(&self) -> Result<Vec<SyntheticImage>> {
        let unit = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
        let sources: Vec<Vec<f64>> = (0..self.classes)
            .map(|c| {
                let mut rng = stream(self.seed, 1, c as u64);
                (0..self.cells())
                    .map(|_| self.separation * unit.sample(&mut rng).abs())
                    .collect()
            })
            .collect();
        (0..self.classes * self.per_class)
            .into_par_iter()
            .map(|i| {
                let (c, j) = (i / self.per_class, i % self.per_class);
                let mut rng = stream(self.seed, 2, i as u64);
                let data = sources[c]
                    .iter()
                    .map(|&s| (s + self.sigma_within * unit.sample(&mut rng)).max(0.0) as f32)
                    .collect();
                Ok(SyntheticImage {
                    image_id: format!("c{c:03}_{j:02}"),
                    class_id: format!("c{c:03}"),
                    is_query: j == 0,
                    map: FeatureMap::new(self.height, self.width, self.depth, data)?,
                })
            })
            .collect()
    }

    /// Writes one tensor per image plus `<name>.json` into `dir`; returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>, name: &str, protocol: Protocol) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let tensors = dir.join(name);
        std::fs::create_dir_all(&tensors).map_err(|e| Error::io(&tensors, e))?;
        let images = self.generate()?;
        let mut entries = Vec::with_capacity(images.len());
        for img in &images {
            let rel = format!("{name}/{}.fmap", img.image_id);
            img.map.save(dir.join(&rel))?;
            entries.push(ManifestEntry {
                image_id: img.image_id.clone(),
                class_id: img.class_id.clone(),
                is_query: img.is_query,
                tensor_path: rel,
            });
        }
        let manifest = DatasetManifest::new(name, entries)?.with_protocol(protocol);
        let path = dir.join(format!("{name}.json"));
        manifest.save(&path)?;
        Ok(path)
    }
}
