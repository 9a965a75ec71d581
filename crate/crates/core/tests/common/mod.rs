//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod reference;

use overparam::latent::sample_correlated_z;
use overparam::{Generator, GeneratorConfig, LatentMatrix, ModulationMode, SeededRng, StyleSource};

pub fn small_generator(seed: u64, dim: usize, channels: &[usize]) -> Generator {
    let cfg = GeneratorConfig::pyramid(dim, dim.max(*channels.iter().max().unwrap()), channels, ModulationMode::Overparam);
    Generator::new(cfg, &mut SeededRng::new(seed)).unwrap()
}

/// A W-space latent matrix from correlated Z rows.
pub fn random_w(g: &Generator, rng: &mut SeededRng) -> LatentMatrix {
    let z = sample_correlated_z(rng, g.config.latent_rows, g.config.latent_dim);
    g.mapper.map_rows(&z).unwrap()
}

pub fn random_vector(g: &Generator, rng: &mut SeededRng) -> Vec<f32> {
    g.mapper.map_latent(&rng.normal_vec(g.config.latent_dim))
}

pub fn random_source(g: &Generator, space: overparam::Space, rng: &mut SeededRng) -> StyleSource {
    StyleSource::random(space, g, rng)
}
