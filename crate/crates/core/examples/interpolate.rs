//! Pairwise-midpoint interpolation study in `w⁺` and `W`.
//!
//! `cargo run --release --example interpolate`

use overparam::editing::interpolation_suite;
use overparam::{FeatureExtractor, Generator, GeneratorConfig, ModulationMode, SeededRng, Space, StyleSource};

fn main() -> overparam::Result<()> {
    let g = Generator::new(GeneratorConfig::desk(ModulationMode::Overparam), &mut SeededRng::new(0))?;
    let mut rng = SeededRng::new(3);
    let reference = (0..200)
        .map(|_| g.synthesize(&StyleSource::sample(Space::Vector, &g, &mut rng)))
        .collect::<overparam::Result<Vec<_>>>()?;
    let fx = FeatureExtractor::default();
    for space in [Space::VectorPlus, Space::Matrix] {
        let latents: Vec<_> = (0..10).map(|_| StyleSource::sample(space, &g, &mut rng)).collect();
        let r = interpolation_suite(&g, &latents, &reference, &fx)?;
        println!("{space:>6}: {} midpoints, feature distance {:.4}, mean path length {:.4}", r.pairs, r.midpoint_fid.unwrap_or(f64::NAN), r.mean_ppl);
    }
    Ok(())
}
