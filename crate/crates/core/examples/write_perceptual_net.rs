//! Regenerate the default perceptual weight file.
//!
//! cargo run -p splatpt --example write_perceptual_net -- crates/core/assets/perceptual_v1.sppn

use std::path::PathBuf;

use splatpt::losses::PerceptualNet;

fn main() -> splatpt::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("perceptual_v1.sppn"));
    let net = PerceptualNet::generate_default();
    net.save(&path)?;
    println!("{} -> {}", net.fingerprint(), path.display());
    Ok(())
}
