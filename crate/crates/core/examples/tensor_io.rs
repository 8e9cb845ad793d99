//! Writes a feature map in the FMAP format, inspects its header and reads it back.

use ddr_vlad::tensor::{read_shape, FeatureMap};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("map.fmap");

    let (h, w, d) = (4, 3, 8);
    let data: Vec<f32> = (0..h * w * d).map(|i| (i as f32).sin().abs()).collect();
    let fm = FeatureMap::new(h, w, d, data)?;
    fm.save(&path)?;

    let bytes = std::fs::metadata(&path)?.len();
    println!("wrote {} ({bytes} bytes)", path.display());
    println!("header shape: {:?}", read_shape(&path)?);

    let back = FeatureMap::load(&path)?;
    assert_eq!(back, fm);
    println!("cell (1, 2) starts with {:?}", &back.cell(1, 2)[..4]);
    Ok(())
}
