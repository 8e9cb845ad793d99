//! Writes a synthetic dataset (tensors plus manifest) for use with the `ddrvlad` binary.
//!
//! ```bash
//! cargo run --release -p ddr-vlad --example make_synthetic -- /tmp/data vocab 1
//! cargo run --release -p ddr-vlad --example make_synthetic -- /tmp/data eval 2
//! ```

use ddr_vlad::evaluation::Protocol;
use ddr_vlad::synthetic::SyntheticSpec;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "synthetic".into());
    let name = args.next().unwrap_or_else(|| "toy".into());
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let spec = SyntheticSpec {
        seed,
        ..Default::default()
    };
    let path = spec.write(&dir, &name, Protocol::ExcludeQuery)?;
    println!("{}", path.display());
    Ok(())
}
