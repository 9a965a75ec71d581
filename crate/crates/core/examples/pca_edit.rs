//! Principal directions of the mapped latent space, applied as uniform
//! shifts to every row of a latent matrix.
//!
//! `cargo run --release --example pca_edit -- [out_dir]`

use overparam::editing::{apply_edit, compute_pca};
use overparam::png_io::{export_png, grid};
use overparam::{FeatureExtractor, Generator, GeneratorConfig, ModulationMode, SeededRng, Space, StyleSource};

fn main() -> overparam::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/examples-out/pca_edit".into());
    std::fs::create_dir_all(&out)?;
    let g = Generator::new(GeneratorConfig::desk(ModulationMode::Overparam), &mut SeededRng::new(0))?;
    let basis = compute_pca(&g, &mut SeededRng::new(1), 10_000)?;
    println!("rank {} / {}, top variances {:?}", basis.rank, basis.dim(), &basis.variances[..4]);
    let src = StyleSource::sample(Space::Matrix, &g, &mut SeededRng::new(2));
    let base = g.synthesize(&src)?;
    let fx = FeatureExtractor::default();
    for k in 0..3 {
        let sigma = basis.variances[k].sqrt();
        let mut row = Vec::new();
        for a in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let img = g.synthesize(&apply_edit(&src, &basis, k, a * sigma)?)?;
            if a == 2.0 {
                println!("component {k}: +2σ perceptual change {:.4}", fx.perceptual_distance(&img, &base)?);
            }
            row.push(img);
        }
        export_png(&grid(&row, row.len())?, format!("{out}/component_{k}.png"))?;
    }
    Ok(())
}
