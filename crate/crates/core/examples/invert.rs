//! Self-inversion: synthesize a target from a random latent matrix, then
//! recover it by optimizing in each of the four latent spaces.
//!
//! `cargo run --release --example invert -- [steps]`

use overparam::inversion::{invert, InversionConfig};
use overparam::{FeatureExtractor, Generator, GeneratorConfig, ModulationMode, SeededRng, Space, StyleSource};

fn main() -> overparam::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let g = Generator::new(GeneratorConfig::desk(ModulationMode::Overparam), &mut SeededRng::new(0))?;
    let target = g.synthesize(&StyleSource::sample(Space::Matrix, &g, &mut SeededRng::new(1000)))?;
    let fx = FeatureExtractor::default();
    for space in Space::ALL {
        let cfg = InversionConfig { steps, ..InversionConfig::for_space(space) };
        let trace = invert(&g, &target, &cfg, &fx, &mut SeededRng::new(1))?;
        println!(
            "{space:>6}: loss {:.5} -> {:.5}  (truncation off from step {:?})",
            trace.losses[0], trace.final_loss, trace.truncation_disabled_at
        );
    }
    Ok(())
}
