//! Overparameterized latent spaces for a style-modulated convolutional
//! generator.
//!
//! The generator can modulate each layer with one style vector (the
//! baseline) or with a full style matrix whose rows come from the rows of a
//! latent matrix `W`. On top of that sit optimization-based inversion into
//! `w`, `w⁺`, `W` and `W⁺`, degraded-observation inversion, style mixing,
//! PCA editing, interpolation studies, deterministic perceptual metrics and
//! a toy adversarial training loop.

pub mod cli;
pub mod config;
pub mod editing;
pub mod error;
pub mod inversion;
pub mod latent;
pub mod loss;
pub mod mapper;
pub mod modulation;
pub mod ops;
pub mod perception;
pub mod png_io;
pub mod rng;
pub mod selftest;
pub mod synthesis;
pub mod tensor;
pub mod training;

pub use config::{GeneratorConfig, LayerSpec, ModulationMode};
pub use error::{Error, Result};
pub use latent::{LatentMatrix, LatentSpace};
pub use modulation::StyleMatrix;
pub use perception::FeatureExtractor;
pub use rng::SeededRng;
pub use synthesis::{Generator, Space, StyleSource};
pub use tensor::{ImageTensor, Tensor};
