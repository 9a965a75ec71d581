//! Style mixing at every crossover layer, for vector and matrix latents.
//!
//! `cargo run --example style_mix -- [out_dir]`

use overparam::editing::style_mix;
use overparam::png_io::{export_png, grid};
use overparam::{Generator, GeneratorConfig, ModulationMode, SeededRng, Space, StyleSource};

fn main() -> overparam::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/examples-out/style_mix".into());
    std::fs::create_dir_all(&out)?;
    let g = Generator::new(GeneratorConfig::desk(ModulationMode::Overparam), &mut SeededRng::new(0))?;
    let mut rng = SeededRng::new(11);
    for space in [Space::Vector, Space::Matrix] {
        let content = StyleSource::sample(space, &g, &mut rng);
        let style = StyleSource::sample(space, &g, &mut rng);
        let strip = (0..=g.num_layers())
            .map(|c| style_mix(&g, &content, &style, c))
            .collect::<overparam::Result<Vec<_>>>()?;
        let path = format!("{out}/{space}.png");
        export_png(&grid(&strip, strip.len())?, &path)?;
        println!("{space}: crossover 0 (all style) .. {} (all content) -> {path}", g.num_layers());
    }
    Ok(())
}
