//! Latent matrices in Z and W, correlated row sampling, truncation and the
//! mean of W.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const DEFAULT_MEAN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentSpace {
    Z,
    W,
}

/// `rows×dim` latent codes, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub space: LatentSpace,
}

impl LatentMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, space: LatentSpace) -> Result<Self> {
        if rows * dim != data.len() {
            return Err(shape_err(format!("latent matrix {rows}x{dim} got {} values", data.len())));
        }
        Ok(Self { rows, dim, data, space })
    }

    /// Every row set to `v`.
    pub fn repeat(v: &[f32], rows: usize, space: LatentSpace) -> Self {
        let mut data = Vec::with_capacity(rows * v.len());
        for _ in 0..rows {
            data.extend_from_slice(v);
        }
        Self { rows, dim: v.len(), data, space }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.dim], self.data.clone()).expect("consistent shape")
    }

    pub fn from_tensor(t: Tensor, space: LatentSpace) -> Result<Self> {
        match *t.shape() {
            [r, d] => Self::new(r, d, t.into_data(), space),
            _ => Err(shape_err(format!("latent matrix must be rank 2, got {:?}", t.shape()))),
        }
    }

    /// Largest Euclidean distance of any row from `mu`.
    pub fn max_row_deviation(&self, mu: &[f32]) -> f32 {
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(mu)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f32>()
                    .sqrt()
            })
            .fold(0.0, f32::max)
    }
}

/// `Z_i = (z̃⁽ⁱ⁾ + z̃) / √2` for the given shared and per-row noise.
pub fn correlate(shared: &[f32], individual: &LatentMatrix) -> Result<LatentMatrix> {
    if shared.len() != individual.dim {
        return Err(shape_err(format!(
            "shared vector length {} != row dim {}",
            shared.len(),
            individual.dim
        )));
    }
    let inv_sqrt2 = std::f32::consts::FRAC_1_SQRT_2;
    let mut data = individual.data.clone();
    for row in data.chunks_exact_mut(individual.dim) {
        for (v, s) in row.iter_mut().zip(shared) {
            *v = (*v + s) * inv_sqrt2;
        }
    }
    LatentMatrix::new(individual.rows, individual.dim, data, LatentSpace::Z)
}

/// Rows that are each marginally `N(0, I)` with pairwise covariance `I/2`.
pub fn sample_correlated_z(rng: &mut SeededRng, rows: usize, dim: usize) -> LatentMatrix {
    let shared = rng.normal_vec(dim);
    let individual = sample_independent_z(rng, rows, dim);
    correlate(&shared, &individual).expect("dims agree")
}

pub fn sample_independent_z(rng: &mut SeededRng, rows: usize, dim: usize) -> LatentMatrix {
    LatentMatrix { rows, dim, data: rng.normal_vec(rows * dim), space: LatentSpace::Z }
}

pub(crate) fn check_psi(psi: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(arg_err(format!("truncation psi {psi} outside [0, 1]")));
    }
    Ok(())
}

/// In-place `v ← μ + ψ·(v − μ)` over consecutive `mu.len()`-sized chunks.
pub(crate) fn truncate_rows_in_place(data: &mut [f32], mu: &[f32], psi: f32) {
    if psi == 1.0 {
        return;
    }
    for row in data.chunks_exact_mut(mu.len()) {
        for (v, m) in row.iter_mut().zip(mu) {
            *v = m + psi * (*v - m);
        }
    }
}

/// Contracts every row toward `mu` by `psi`.
pub fn truncate(m: &LatentMatrix, mu: &[f32], psi: f32) -> Result<LatentMatrix> {
    check_psi(psi)?;
    if m.space != LatentSpace::W {
        return Err(arg_err("truncation applies to W-space matrices"));
    }
    if mu.len() != m.dim {
        return Err(shape_err(format!("mean length {} != dim {}", mu.len(), m.dim)));
    }
    let mut out = m.clone();
    truncate_rows_in_place(&mut out.data, mu, psi);
    Ok(out)
}

/// Monte-Carlo estimate of `E_z[M(z)]` for `z ~ N(0, I_dim)`.
pub fn estimate_mean_w(
    mapper: impl Fn(&[f32]) -> Vec<f32>,
    dim: usize,
    rng: &mut SeededRng,
    n_samples: usize,
) -> Result<Vec<f32>> {
    if n_samples == 0 {
        return Err(arg_err("need at least one sample"));
    }
    let mut acc: Vec<f64> = Vec::new();
    for _ in 0..n_samples {
        let z = rng.normal_vec(dim);
        let w = mapper(&z);
        if acc.is_empty() {
            acc = vec![0.0; w.len()];
        }
        for (a, v) in acc.iter_mut().zip(&w) {
            *a += *v as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / n_samples as f64) as f32).collect())
}
