//! Style modulation of convolution weights.
//!
//! Baseline modulation scales input-channel columns of `Θ[o, i, ky, kx]` by a
//! style vector `s[i]`. Overparameterized modulation scales every
//! `(output, input)` pair by its own coefficient `S[o, i]`; when all rows of
//! `S` equal `s` the two coincide bit-for-bit.

use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::Tensor;

pub const DEMOD_EPS: f32 = 1e-8;

/// Row-major `rows×cols` style coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl StyleMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(shape_err(format!("style matrix {rows}x{cols} got {} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn replicate(s: &[f32], rows: usize) -> Self {
        let mut data = Vec::with_capacity(rows * s.len());
        for _ in 0..rows {
            data.extend_from_slice(s);
        }
        Self { rows, cols: s.len(), data }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedWeights {
    pub weights: Tensor,
    pub demodulated: bool,
}

fn conv_dims(theta: &Tensor) -> Result<(usize, usize, usize)> {
    match *theta.shape() {
        [o, i, k1, k2] if k1 == k2 => Ok((o, i, k1 * k2)),
        _ => Err(shape_err(format!("expected N_O×N_I×k×k weights, got {:?}", theta.shape()))),
    }
}

/// `Θ'[:, j] = Θ[:, j] · s[j]`.
pub fn modulate_baseline(theta: &Tensor, s: &[f32]) -> Result<ModulatedWeights> {
    let (n_out, n_in, kk) = conv_dims(theta)?;
    if s.len() != n_in {
        return Err(shape_err(format!("style length {} != N_I {}", s.len(), n_in)));
    }
    let mut w = theta.data().to_vec();
    for o in 0..n_out {
        for (j, &sj) in s.iter().enumerate() {
            let base = (o * n_in + j) * kk;
            w[base..base + kk].iter_mut().for_each(|v| *v *= sj);
        }
    }
    Ok(ModulatedWeights {
        weights: Tensor::new(theta.shape().to_vec(), w)?,
        demodulated: false,
    })
}

/// `Θ'[i, j] = Θ[i, j] · S[i, j]`.
pub fn modulate_overparam(theta: &Tensor, s: &StyleMatrix) -> Result<ModulatedWeights> {
    let (n_out, n_in, kk) = conv_dims(theta)?;
    if s.rows != n_out || s.cols != n_in {
        return Err(shape_err(format!(
            "style matrix {}x{} does not match weights {}x{}",
            s.rows, s.cols, n_out, n_in
        )));
    }
    let mut w = theta.data().to_vec();
    for (pair, &sij) in s.data.iter().enumerate() {
        w[pair * kk..(pair + 1) * kk].iter_mut().for_each(|v| *v *= sij);
    }
    Ok(ModulatedWeights {
        weights: Tensor::new(theta.shape().to_vec(), w)?,
        demodulated: false,
    })
}

/// Keeps the first `n_out` rows.
pub fn drop_rows(s: &StyleMatrix, n_out: usize) -> Result<StyleMatrix> {
    if s.rows < n_out {
        return Err(arg_err(format!("cannot keep {n_out} rows of a {}-row style matrix", s.rows)));
    }
    Ok(StyleMatrix { rows: n_out, cols: s.cols, data: s.data[..n_out * s.cols].to_vec() })
}

/// Per-output-channel norms `sqrt(Σ Θ'² + ε)`.
pub(crate) fn channel_norms(w: &[f32], n_out: usize, eps: f32) -> Vec<f32> {
    let per = w.len() / n_out;
    w.chunks_exact(per)
        .map(|c| (c.iter().map(|v| v * v).sum::<f32>() + eps).sqrt())
        .collect()
}

pub(crate) fn demodulate_in_place(w: &mut [f32], norms: &[f32]) {
    let per = w.len() / norms.len();
    for (c, n) in w.chunks_exact_mut(per).zip(norms) {
        c.iter_mut().for_each(|v| *v /= n);
    }
}

pub fn demodulate(m: &ModulatedWeights, eps: f32) -> Result<ModulatedWeights> {
    if m.demodulated {
        return Err(Error::InvalidArgument("weights already demodulated".into()));
    }
    let n_out = m.weights.shape()[0];
    let mut w = m.weights.data().to_vec();
    let norms = channel_norms(&w, n_out, eps);
    demodulate_in_place(&mut w, &norms);
    Ok(ModulatedWeights {
        weights: Tensor::new(m.weights.shape().to_vec(), w)?,
        demodulated: true,
    })
}

/// Reverse pass of demodulation: given `Θ'`, its channel norms and the
/// gradient w.r.t. `Θ''`, returns the gradient w.r.t. `Θ'`.
pub(crate) fn demodulate_backward(theta_prime: &[f32], norms: &[f32], grad: &[f32]) -> Vec<f32> {
    let per = theta_prime.len() / norms.len();
    let mut out = vec![0.0; theta_prime.len()];
    for (o, &n) in norms.iter().enumerate() {
        let x = &theta_prime[o * per..(o + 1) * per];
        let g = &grad[o * per..(o + 1) * per];
        let gx: f32 = x.iter().zip(g).map(|(a, b)| a * b).sum();
        let inv = 1.0 / n;
        let k = gx * inv * inv * inv;
        for t in 0..per {
            out[o * per + t] = g[t] * inv - x[t] * k;
        }
    }
    out
}

/// Gradient w.r.t. the `N_O×N_I` style coefficients, given `Θ` and the
/// gradient w.r.t. `Θ'`.
pub(crate) fn style_grad(theta: &[f32], grad_prime: &[f32], kk: usize) -> Vec<f32> {
    theta
        .chunks_exact(kk)
        .zip(grad_prime.chunks_exact(kk))
        .map(|(t, g)| t.iter().zip(g).map(|(a, b)| a * b).sum())
        .collect()
}
