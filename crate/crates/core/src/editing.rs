//! Downstream tasks on top of the generator: style mixing, principal
//! directions of W with uniform row shifts, and pairwise interpolation
//! studies.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::perception::{fit_stats, frechet_distance, ppl_segments, FeatureExtractor};
use crate::rng::SeededRng;
use crate::synthesis::{Generator, StyleSource};
use crate::tensor::{load_tensor, save_tensor, ImageTensor, Tensor};

/// Layers `< crossover` take their latents from `content`, the rest from `style`.
pub fn mix_sources(g: &Generator, content: &StyleSource, style: &StyleSource, crossover: usize) -> Result<StyleSource> {
    let l = g.num_layers();
    if crossover > l {
        return Err(arg_err(format!("crossover {crossover} outside 0..={l}")));
    }
    g.validate_source(content)?;
    g.validate_source(style)?;
    let matrix = content.space().is_matrix() || style.space().is_matrix();
    let layered = |s: &StyleSource| {
        if matrix {
            s.to_matrix_plus(l, g.config.latent_rows)
        } else {
            s.to_layered(l)
        }
    };
    Ok(match (layered(content), layered(style)) {
        (StyleSource::VectorPlus(mut a), StyleSource::VectorPlus(b)) => {
            a[crossover..].clone_from_slice(&b[crossover..]);
            StyleSource::VectorPlus(a)
        }
        (StyleSource::MatrixPlus(mut a), StyleSource::MatrixPlus(b)) => {
            a[crossover..].clone_from_slice(&b[crossover..]);
            StyleSource::MatrixPlus(a)
        }
        _ => unreachable!("both sides converted to the same layered form"),
    })
}

pub fn style_mix(g: &Generator, content: &StyleSource, style: &StyleSource, crossover: usize) -> Result<ImageTensor> {
    g.synthesize(&mix_sources(g, content, style, crossover)?)
}

/// Principal directions of a point cloud, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f32>,
    pub components: Vec<Vec<f32>>,
    pub variances: Vec<f32>,
    /// Number of variances above `1e-6 ×` the largest.
    pub rank: usize,
}

impl PcaBasis {
    /// Eigendecomposition of the sample covariance. Each component is
    /// sign-fixed so that its largest-magnitude coordinate is positive.
    pub fn from_samples(samples: &[Vec<f32>]) -> Result<Self> {
        let n = samples.len();
        let d = samples.first().map_or(0, Vec::len);
        if n < d + 1 || d == 0 {
            return Err(arg_err(format!("PCA in {d} dimensions needs at least {} samples, got {n}", d + 1)));
        }
        if samples.iter().any(|s| s.len() != d) {
            return Err(shape_err("PCA samples differ in dimension"));
        }
        let mut mean = vec![0.0f64; d];
        for s in samples {
            mean.iter_mut().zip(s).for_each(|(m, v)| *m += *v as f64);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::from_fn(n, d, |i, j| samples[i][j] as f64 - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new((&cov + cov.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut components = Vec::with_capacity(d);
        let mut variances = Vec::with_capacity(d);
        for &k in &order {
            let v = eig.eigenvectors.column(k);
            let pivot = v.iter().fold(0.0f64, |best, &x| if x.abs() > best.abs() { x } else { best });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            components.push(v.iter().map(|&x| (sign * x) as f32).collect());
            variances.push(eig.eigenvalues[k].max(0.0) as f32);
        }
        let top = variances.first().copied().unwrap_or(0.0);
        let rank = variances.iter().filter(|&&v| v > 1e-6 * top && v > 0.0).count();
        Ok(Self { mean: mean.into_iter().map(|m| m as f32).collect(), components, variances, rank })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Coefficients of `x − mean` along every component.
    pub fn project(&self, x: &[f32]) -> Vec<f32> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x.iter().zip(&self.mean)).map(|(ci, (xi, mi))| ci * (xi - mi)).sum())
            .collect()
    }

    pub fn reconstruct(&self, coeffs: &[f32]) -> Vec<f32> {
        let mut out = self.mean.clone();
        for (c, &a) in self.components.iter().zip(coeffs) {
            out.iter_mut().zip(c).for_each(|(o, v)| *o += a * v);
        }
        out
    }

    /// `components.opt` (`K×D`), `mean.opt`, `variances.opt` and `pca.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let k = self.components.len();
        save_tensor(&Tensor::new(vec![k, self.dim()], self.components.concat())?, dir.join("components.opt"))?;
        save_tensor(&Tensor::new(vec![self.dim()], self.mean.clone())?, dir.join("mean.opt"))?;
        save_tensor(&Tensor::new(vec![k], self.variances.clone())?, dir.join("variances.opt"))?;
        let meta = serde_json::json!({
            "format": "overparam-pca-v1",
            "dim": self.dim(),
            "components": k,
            "rank": self.rank,
            "variances": self.variances,
        });
        std::fs::write(dir.join("pca.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let comps = load_tensor(dir.join("components.opt"))?;
        let mean = load_tensor(dir.join("mean.opt"))?.into_data();
        let variances = load_tensor(dir.join("variances.opt"))?.into_data();
        let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("pca.json"))?)?;
        let (k, d) = match *comps.shape() {
            [k, d] => (k, d),
            _ => return Err(Error::Format("components must be rank 2".into())),
        };
        if d != mean.len() || k != variances.len() {
            return Err(shape_err("PCA files disagree in shape"));
        }
        Ok(Self {
            mean,
            components: comps.data().chunks_exact(d.max(1)).map(<[f32]>::to_vec).collect(),
            variances,
            rank: meta["rank"].as_u64().unwrap_or(k as u64) as usize,
        })
    }
}

/// PCA of `n_samples` independent `w = M(z)` draws.
pub fn compute_pca(g: &Generator, rng: &mut SeededRng, n_samples: usize) -> Result<PcaBasis> {
    let d = g.config.latent_dim;
    if n_samples < d + 1 {
        return Err(arg_err(format!("need at least {} samples, got {n_samples}", d + 1)));
    }
    let z = rng.normal_vec(n_samples * d);
    let (w, _) = g.mapper.forward_rows(&z, n_samples);
    PcaBasis::from_samples(&w.chunks_exact(d).map(<[f32]>::to_vec).collect::<Vec<_>>())
}

/// Shifts every vector/row of `src` by `alpha · components[k]`.
pub fn apply_edit(src: &StyleSource, basis: &PcaBasis, k: usize, alpha: f32) -> Result<StyleSource> {
    let v = basis
        .components
        .get(k)
        .ok_or_else(|| arg_err(format!("component {k} out of range ({} available)", basis.components.len())))?;
    let mut flat = src.flat();
    if !flat.len().is_multiple_of(v.len()) {
        return Err(shape_err(format!("latent dim does not match basis dim {}", v.len())));
    }
    for row in flat.chunks_exact_mut(v.len()) {
        row.iter_mut().zip(v).for_each(|(x, c)| *x += alpha * c);
    }
    let mut out = src.clone();
    out.set_flat(&flat);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub latents: usize,
    pub pairs: usize,
    /// Fréchet feature distance of the midpoint set to the reference set;
    /// absent with fewer than two midpoints.
    pub midpoint_fid: Option<f64>,
    /// Mean segment-PPL over pairs.
    pub mean_ppl: f32,
}

/// Images at the latent midpoint of every pair `i < j`.
pub fn pairwise_midpoints(g: &Generator, latents: &[StyleSource]) -> Result<Vec<ImageTensor>> {
    let mut out = Vec::with_capacity(latents.len() * latents.len().saturating_sub(1) / 2);
    for i in 0..latents.len() {
        for j in i + 1..latents.len() {
            out.push(g.synthesize(&StyleSource::lerp(&latents[i], &latents[j], 0.5)?)?);
        }
    }
    Ok(out)
}

pub const PPL_SEGMENTS: usize = 5;

pub fn interpolation_suite(
    g: &Generator,
    latents: &[StyleSource],
    reference: &[ImageTensor],
    extractor: &FeatureExtractor,
) -> Result<InterpolationReport> {
    if latents.len() < 2 {
        return Err(arg_err("interpolation needs at least two latents"));
    }
    let space = latents[0].space();
    if latents.iter().any(|l| l.space() != space) {
        return Err(arg_err("interpolation latents must share one space"));
    }
    let midpoints = pairwise_midpoints(g, latents)?;
    let midpoint_fid = if midpoints.len() >= 2 {
        Some(frechet_distance(&fit_stats(extractor, &midpoints)?, &fit_stats(extractor, reference)?)?)
    } else {
        None
    };
    let mut ppl = 0.0f64;
    for i in 0..latents.len() {
        for j in i + 1..latents.len() {
            ppl += ppl_segments(g, extractor, &latents[i], &latents[j], PPL_SEGMENTS)? as f64;
        }
    }
    Ok(InterpolationReport {
        latents: latents.len(),
        pairs: midpoints.len(),
        midpoint_fid,
        mean_ppl: (ppl / midpoints.len() as f64) as f32,
    })
}
