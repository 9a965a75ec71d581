//! Samples a freshly initialized desk generator in all four latent spaces.
//!
//! `cargo run --example generate -- [out_dir]`

use overparam::png_io::{export_png, grid};
use overparam::{Generator, GeneratorConfig, ModulationMode, SeededRng, Space, StyleSource};

fn main() -> overparam::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/examples-out/generate".into());
    std::fs::create_dir_all(&out)?;
    let g = Generator::new(GeneratorConfig::desk(ModulationMode::Overparam), &mut SeededRng::new(0))?;
    let mut rng = SeededRng::new(7);
    for space in Space::ALL {
        let images = (0..8)
            .map(|_| g.synthesize(&StyleSource::sample(space, &g, &mut rng)))
            .collect::<overparam::Result<Vec<_>>>()?;
        let path = format!("{out}/{space}.png");
        export_png(&grid(&images, 4)?, &path)?;
        println!("{space:>6}: {} latent parameters -> {path}", StyleSource::sample(space, &g, &mut rng).num_params());
    }
    Ok(())
}
