//! Mapping network `M: R^D → R^D` and per-layer affine style projections.
//! Both operate on whole latent matrices with one matrix product per layer.

use crate::error::{shape_err, Result};
use crate::latent::{LatentMatrix, LatentSpace};
use crate::modulation::StyleMatrix;
use crate::ops::{gemm, leaky, leaky_grad};
use crate::rng::SeededRng;

pub const LEAKY_SLOPE: f32 = 0.2;

/// Fully connected layer, `weight` is row-major `out_dim×in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn random(in_dim: usize, out_dim: usize, std: f32, bias: f32, rng: &mut SeededRng) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: rng.normal_vec(in_dim * out_dim).into_iter().map(|v| v * std).collect(),
            bias: vec![bias; out_dim],
        }
    }

    /// `y = x·Wᵀ + b` for `rows` stacked inputs.
    pub fn forward_rows(&self, x: &[f32], rows: usize) -> Vec<f32> {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = vec![0.0; rows * self.out_dim];
        gemm(rows, self.in_dim, self.out_dim, x, self.in_dim, 1, &self.weight, 1, self.in_dim, &mut y, 0.0);
        for row in y.chunks_exact_mut(self.out_dim) {
            row.iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        }
        y
    }

    /// Returns the input gradient; accumulates parameter gradients into `grad`.
    pub fn backward_rows(&self, x: &[f32], gy: &[f32], rows: usize, grad: Option<&mut Dense>) -> Vec<f32> {
        let mut gx = vec![0.0; rows * self.in_dim];
        gemm(rows, self.out_dim, self.in_dim, gy, self.out_dim, 1, &self.weight, self.in_dim, 1, &mut gx, 0.0);
        if let Some(g) = grad {
            gemm(self.out_dim, rows, self.in_dim, gy, 1, self.out_dim, x, self.in_dim, 1, &mut g.weight, 1.0);
            for row in gy.chunks_exact(self.out_dim) {
                g.bias.iter_mut().zip(row).for_each(|(b, v)| *b += v);
            }
        }
        gx
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Vec<f32>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub(crate) fn params(&self) -> [&Vec<f32>; 2] {
        [&self.weight, &self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingNetwork {
    pub dim: usize,
    pub layers: Vec<Dense>,
    /// Leaky-rectifier slope; 1.0 disables the nonlinearity.
    pub slope: f32,
    /// Rescale inputs to `z·√D/‖z‖` before the first layer.
    pub normalize: bool,
}

/// Activations saved by [`MappingNetwork::forward_rows`].
#[derive(Debug, Clone)]
pub struct MapperTrace {
    rows: usize,
    z: Vec<f32>,
    inv_rms: Vec<f32>,
    inputs: Vec<Vec<f32>>,
    pre: Vec<Vec<f32>>,
}

impl MappingNetwork {
    /// Weights `N(0, 1/D)`, zero biases, input normalization on.
    pub fn new(dim: usize, n_layers: usize, rng: &mut SeededRng) -> Self {
        let std = 1.0 / (dim as f32).sqrt();
        Self {
            dim,
            layers: (0..n_layers).map(|_| Dense::random(dim, dim, std, 0.0, rng)).collect(),
            slope: LEAKY_SLOPE,
            normalize: true,
        }
    }

    /// Identity weights, zero bias, no normalization, linear activation.
    pub fn identity(dim: usize, n_layers: usize) -> Self {
        let mut layers = vec![Dense::zeros(dim, dim); n_layers];
        for l in &mut layers {
            for i in 0..dim {
                l.weight[i * dim + i] = 1.0;
            }
        }
        Self { dim, layers, slope: 1.0, normalize: false }
    }

    pub fn zeros_like(&self) -> Vec<Dense> {
        self.layers.iter().map(|l| Dense::zeros(l.in_dim, l.out_dim)).collect()
    }

    pub fn map_latent(&self, z: &[f32]) -> Vec<f32> {
        self.forward_rows(z, 1).0
    }

    pub fn forward_rows(&self, z: &[f32], rows: usize) -> (Vec<f32>, MapperTrace) {
        let d = self.dim;
        assert_eq!(z.len(), rows * d, "mapper input has wrong length");
        let mut x = z.to_vec();
        let mut inv_rms = Vec::new();
        if self.normalize {
            for row in x.chunks_exact_mut(d) {
                let ms = row.iter().map(|v| v * v).sum::<f32>() / d as f32;
                let r = 1.0 / (ms + 1e-8).sqrt();
                row.iter_mut().for_each(|v| *v *= r);
                inv_rms.push(r);
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let y = layer.forward_rows(&x, rows);
            inputs.push(std::mem::take(&mut x));
            x = y.iter().map(|&v| leaky(v, self.slope)).collect();
            pre.push(y);
        }
        (x, MapperTrace { rows, z: z.to_vec(), inv_rms, inputs, pre })
    }

    /// Gradient w.r.t. the mapper input; accumulates parameter gradients.
    pub fn backward_rows(&self, trace: &MapperTrace, gw: &[f32], mut grads: Option<&mut [Dense]>) -> Vec<f32> {
        let d = self.dim;
        let mut g = gw.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (gv, &p) in g.iter_mut().zip(&trace.pre[l]) {
                *gv *= leaky_grad(p, self.slope);
            }
            let lg = grads.as_deref_mut().map(|gs| &mut gs[l]);
            g = layer.backward_rows(&trace.inputs[l], &g, trace.rows, lg);
        }
        if self.normalize {
            for (i, (grow, zrow)) in g.chunks_exact_mut(d).zip(trace.z.chunks_exact(d)).enumerate() {
                let r = trace.inv_rms[i];
                let gz: f32 = grow.iter().zip(zrow).map(|(a, b)| a * b).sum();
                let k = r * r * r * gz / d as f32;
                for (gv, &zv) in grow.iter_mut().zip(zrow) {
                    *gv = r * *gv - k * zv;
                }
            }
        }
        g
    }

    /// Batched estimate of `E_z[M(z)]`.
    pub fn mean_w(&self, rng: &mut SeededRng, n_samples: usize) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        let mut left = n_samples.max(1);
        while left > 0 {
            let b = left.min(1024);
            let z = rng.normal_vec(b * self.dim);
            let (w, _) = self.forward_rows(&z, b);
            for row in w.chunks_exact(self.dim) {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += *v as f64);
            }
            left -= b;
        }
        acc.into_iter().map(|a| (a / n_samples.max(1) as f64) as f32).collect()
    }

    /// `M` applied to every row of a Z-space matrix.
    pub fn map_rows(&self, z: &LatentMatrix) -> Result<LatentMatrix> {
        if z.dim != self.dim {
            return Err(shape_err(format!("latent dim {} != mapper dim {}", z.dim, self.dim)));
        }
        let (w, _) = self.forward_rows(&z.data, z.rows);
        LatentMatrix::new(z.rows, z.dim, w, LatentSpace::W)
    }
}

/// `A⁽ˡ⁾: R^D → R^{N_I}`, bias initialized to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineProjection {
    pub dense: Dense,
}

impl AffineProjection {
    pub fn new(dim: usize, n_in: usize, rng: &mut SeededRng) -> Self {
        Self { dense: Dense::random(dim, n_in, 1.0 / (dim as f32).sqrt(), 1.0, rng) }
    }

    pub fn style_dim(&self) -> usize {
        self.dense.out_dim
    }

    pub fn apply(&self, w: &[f32]) -> Vec<f32> {
        self.dense.forward_rows(w, 1)
    }

    /// One style row per latent row.
    pub fn apply_rows(&self, w: &[f32], rows: usize) -> StyleMatrix {
        StyleMatrix { rows, cols: self.dense.out_dim, data: self.dense.forward_rows(w, rows) }
    }
}

/// `S⁽ˡ⁾_i = A⁽ˡ⁾(M(Z_i))` for every layer, with one batched product per layer.
pub fn map_matrix(
    mapper: &MappingNetwork,
    projections: &[AffineProjection],
    z: &LatentMatrix,
) -> Result<Vec<StyleMatrix>> {
    let w = mapper.map_rows(z)?;
    Ok(projections.iter().map(|a| a.apply_rows(&w.data, w.rows)).collect())
}
