//! The deterministic perceptual metrics: feature distance between images,
//! Fréchet distance between feature Gaussians, and segment path length.

use overparam::perception::{fit_stats, frechet_distance, ppl_segments};
use overparam::training::SyntheticDataset;
use overparam::{FeatureExtractor, Generator, GeneratorConfig, ImageTensor, ModulationMode, SeededRng, Space, StyleSource};

fn main() -> overparam::Result<()> {
    let fx = FeatureExtractor::default();
    let black = ImageTensor::filled(3, 32, 32, -1.0);
    let gray = ImageTensor::filled(3, 32, 32, 0.0);
    let white = ImageTensor::filled(3, 32, 32, 1.0);
    println!("d(black, white) {:.4}", fx.perceptual_distance(&black, &white)?);
    println!("d(black, gray)  {:.4}", fx.perceptual_distance(&black, &gray)?);

    let data = SyntheticDataset::new(0, 512, 32)?;
    let a = data.batch(&(0..256).collect::<Vec<_>>());
    let b = data.batch(&(256..512).collect::<Vec<_>>());
    let g = Generator::new(GeneratorConfig::desk(ModulationMode::Overparam), &mut SeededRng::new(0))?;
    let mut rng = SeededRng::new(4);
    let fake = (0..256)
        .map(|_| g.synthesize(&StyleSource::sample(Space::Vector, &g, &mut rng)))
        .collect::<overparam::Result<Vec<_>>>()?;
    let (sa, sb, sf) = (fit_stats(&fx, &a)?, fit_stats(&fx, &b)?, fit_stats(&fx, &fake)?);
    println!("Fréchet: dataset halves {:.4}, untrained generator vs dataset {:.4}", frechet_distance(&sa, &sb)?, frechet_distance(&sf, &sa)?);

    let p = StyleSource::sample(Space::Matrix, &g, &mut rng);
    let q = StyleSource::sample(Space::Matrix, &g, &mut rng);
    println!("5-segment path length {:.4}", ppl_segments(&g, &fx, &p, &q, 5)?);
    Ok(())
}
