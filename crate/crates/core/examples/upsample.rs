//! Generator-driven 4× upsampling: invert a nearest-neighbour-downsampled
//! observation while comparing in the downsampled domain.
//!
//! `cargo run --release --example upsample -- [out_dir]`

use overparam::inversion::{invert_degraded, DegradationOp, InversionConfig};
use overparam::png_io::{export_png, grid};
use overparam::{FeatureExtractor, Generator, GeneratorConfig, ModulationMode, SeededRng, Space, StyleSource};

fn main() -> overparam::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/examples-out/upsample".into());
    std::fs::create_dir_all(&out)?;
    let g = Generator::new(GeneratorConfig::desk(ModulationMode::Overparam), &mut SeededRng::new(0))?;
    let truth = g.synthesize(&StyleSource::sample(Space::Matrix, &g, &mut SeededRng::new(2024)))?;
    let deg = DegradationOp::Downsample { factor: 4 };
    let low = deg.apply(&truth)?;
    let fx = FeatureExtractor::default();
    for space in [Space::VectorPlus, Space::Matrix] {
        let cfg = InversionConfig { steps: 400, ..InversionConfig::pulse(space) };
        let trace = invert_degraded(&g, &low, deg, &cfg, &fx, &mut SeededRng::new(5))?;
        let err = fx.perceptual_distance(&trace.final_image, &truth)?;
        println!("{space:>6}: low-res loss {:.5} -> {:.5}, distance to the hidden original {err:.4}", trace.losses[0], trace.final_loss);
        let panel = grid(&[deg.upsample(&low), trace.final_image, truth.clone()], 3)?;
        export_png(&panel, format!("{out}/{space}.png"))?;
    }
    Ok(())
}
