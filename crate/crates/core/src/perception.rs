//! Deterministic perceptual metrics built on one frozen random convolutional
//! pyramid: a normalized-feature perceptual distance, a Fréchet feature
//! distance between Gaussian fits, and the segment form of the perceptual
//! path length.
//!
//! The extractor has four stages, each a 3×3 convolution (3→16→32→64→64
//! channels, no bias, weights `N(0, 2/fan_in)`), a leaky rectifier with
//! slope 0.2 and 2× average pooling. Weights are drawn from
//! [`SeededRng`] with [`EXTRACTOR_SEED`] unless another seed is given.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::loss::{mse_and_grad, ImageLoss};
use crate::ops::{
    avgpool2, avgpool2_backward, conv_backward_data, conv_forward, leaky_backward, leaky_inplace, ConvGeom,
};
use crate::rng::SeededRng;
use crate::synthesis::{Generator, StyleSource};
use crate::tensor::ImageTensor;

pub const EXTRACTOR_SEED: u64 = 0;
pub const EXTRACTOR_CHANNELS: [usize; 5] = [3, 16, 32, 64, 64];
const SLOPE: f32 = 0.2;
const NORM_EPS: f32 = 1e-10;
const PSD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Stage {
    c_in: usize,
    c_out: usize,
    weight: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    seed: u64,
    stages: Vec<Stage>,
}

/// Per-stage outputs, each `C×H×W` after pooling.
#[derive(Debug, Clone)]
pub struct Features {
    pub stages: Vec<StageFeatures>,
}

#[derive(Debug, Clone)]
pub struct StageFeatures {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

struct StageTrace {
    geom: ConvGeom,
    pre: Vec<f32>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(EXTRACTOR_SEED)
    }
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let stages = EXTRACTOR_CHANNELS
            .windows(2)
            .map(|c| {
                let fan_in = c[0] * 9;
                let std = (2.0 / fan_in as f32).sqrt();
                Stage {
                    c_in: c[0],
                    c_out: c[1],
                    weight: rng.normal_vec(c[1] * fan_in).into_iter().map(|v| v * std).collect(),
                }
            })
            .collect();
        Self { seed, stages }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_dim(&self) -> usize {
        self.stages.last().map_or(0, |s| s.c_out)
    }

    fn check_input(&self, img: &ImageTensor) -> Result<()> {
        let need = 1 << self.stages.len();
        if img.channels != self.stages[0].c_in {
            return Err(shape_err(format!("extractor expects {} channels, got {}", self.stages[0].c_in, img.channels)));
        }
        if img.height < need || img.width < need {
            return Err(shape_err(format!("extractor needs at least {need}x{need} pixels")));
        }
        Ok(())
    }

    fn forward(&self, img: &ImageTensor) -> (Features, Vec<StageTrace>) {
        let (mut h, mut w) = (img.height, img.width);
        let mut x = img.data.clone();
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut traces = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            let geom = ConvGeom::same(st.c_in, st.c_out, h, w, 3);
            let (mut y, _) = conv_forward(&x, &st.weight, &geom);
            let pre = y.clone();
            leaky_inplace(&mut y, SLOPE);
            x = avgpool2(&y, st.c_out, h, w);
            h /= 2;
            w /= 2;
            stages.push(StageFeatures { channels: st.c_out, height: h, width: w, data: x.clone() });
            traces.push(StageTrace { geom, pre });
        }
        (Features { stages }, traces)
    }

    pub fn features(&self, img: &ImageTensor) -> Result<Features> {
        self.check_input(img)?;
        Ok(self.forward(img).0)
    }

    /// Gradient w.r.t. the image given per-stage gradients w.r.t. each
    /// stage's pooled output.
    fn backward(&self, traces: &[StageTrace], mut stage_grads: Vec<Vec<f32>>) -> Vec<f32> {
        let mut carry: Option<Vec<f32>> = None;
        for (s, (st, tr)) in self.stages.iter().zip(traces).enumerate().rev() {
            let mut g = std::mem::take(&mut stage_grads[s]);
            if let Some(c) = carry.take() {
                g.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            }
            let (h, w) = (tr.geom.h, tr.geom.w);
            let mut gy = avgpool2_backward(&g, st.c_out, h, w);
            leaky_backward(&tr.pre, &mut gy, SLOPE);
            carry = Some(conv_backward_data(&gy, &st.weight, &tr.geom));
        }
        carry.unwrap_or_default()
    }

    /// Global-average-pooled final stage.
    pub fn pooled(&self, img: &ImageTensor) -> Result<Vec<f32>> {
        let f = self.features(img)?;
        let last = f.stages.last().expect("at least one stage");
        let hw = last.height * last.width;
        Ok(last.data.chunks_exact(hw).map(|c| c.iter().sum::<f32>() / hw as f32).collect())
    }

    pub fn perceptual_distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f32> {
        if !a.same_shape(b) {
            return Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let na = normalized(&self.features(a)?);
        let nb = normalized(&self.features(b)?);
        Ok(distance(&na, &nb))
    }
}

/// Each spatial position's channel vector scaled to unit length.
fn normalize_stage(f: &StageFeatures) -> Vec<f32> {
    let hw = f.height * f.width;
    let mut out = f.data.clone();
    for p in 0..hw {
        let r = (0..f.channels).map(|c| f.data[c * hw + p].powi(2)).sum::<f32>().sqrt();
        let inv = 1.0 / (r + NORM_EPS);
        for c in 0..f.channels {
            out[c * hw + p] *= inv;
        }
    }
    out
}

fn normalized(f: &Features) -> Vec<Vec<f32>> {
    f.stages.iter().map(normalize_stage).collect()
}

fn distance(a: &[Vec<f32>], b: &[Vec<f32>]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let s: f64 = x.iter().zip(y).map(|(p, q)| ((p - q) as f64).powi(2)).sum();
            (s / x.len() as f64) as f32
        })
        .sum()
}

/// Reverse pass of [`normalize_stage`].
fn normalize_backward(f: &StageFeatures, g: &[f32]) -> Vec<f32> {
    let hw = f.height * f.width;
    let mut out = vec![0.0; g.len()];
    for p in 0..hw {
        let r = (0..f.channels).map(|c| f.data[c * hw + p].powi(2)).sum::<f32>().sqrt();
        let denom = r + NORM_EPS;
        let gf: f32 = (0..f.channels).map(|c| g[c * hw + p] * f.data[c * hw + p]).sum();
        let k = if r > 0.0 { gf / (r * denom * denom) } else { 0.0 };
        for c in 0..f.channels {
            let i = c * hw + p;
            out[i] = g[i] / denom - f.data[i] * k;
        }
    }
    out
}

/// Perceptual distance to a fixed target plus an optional weighted pixel MSE.
pub struct PerceptualLoss<'a> {
    extractor: &'a FeatureExtractor,
    target: ImageTensor,
    target_norm: Vec<Vec<f32>>,
    pub pixel_weight: f32,
}

impl<'a> PerceptualLoss<'a> {
    pub fn new(extractor: &'a FeatureExtractor, target: ImageTensor, pixel_weight: f32) -> Result<Self> {
        let target_norm = normalized(&extractor.features(&target)?);
        Ok(Self { extractor, target, target_norm, pixel_weight })
    }

    pub fn target(&self) -> &ImageTensor {
        &self.target
    }
}

impl ImageLoss for PerceptualLoss<'_> {
    fn evaluate(&self, img: &ImageTensor) -> Result<(f32, Vec<f32>)> {
        if !img.same_shape(&self.target) {
            return Err(shape_err(format!("image {:?} vs target {:?}", img.shape(), self.target.shape())));
        }
        let (feats, traces) = self.extractor.forward(img);
        let na = normalized(&feats);
        let value = distance(&na, &self.target_norm);
        let stage_grads = feats
            .stages
            .iter()
            .zip(na.iter().zip(&self.target_norm))
            .map(|(f, (a, b))| {
                let n = a.len() as f32;
                let g: Vec<f32> = a.iter().zip(b).map(|(x, y)| 2.0 * (x - y) / n).collect();
                normalize_backward(f, &g)
            })
            .collect();
        let mut grad = self.extractor.backward(&traces, stage_grads);
        let mut total = value;
        if self.pixel_weight != 0.0 {
            let (l2, g2) = mse_and_grad(img, &self.target)?;
            total += self.pixel_weight * l2;
            grad.iter_mut().zip(&g2).for_each(|(a, b)| *a += self.pixel_weight * b);
        }
        Ok((total, grad))
    }
}

/// Mean and covariance of pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    /// Mean and unbiased covariance of row samples.
    pub fn from_samples(samples: &[Vec<f32>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(arg_err("need at least two samples for a covariance"));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(shape_err("samples differ in dimension"));
        }
        let n = samples.len() as f64;
        let mut mean = DVector::<f64>::zeros(d);
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += *v as f64;
            }
        }
        mean /= n;
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for s in samples {
            let c = DVector::from_iterator(d, s.iter().map(|&v| v as f64)) - &mean;
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        Ok(Self { mean, cov })
    }
}

pub fn fit_stats(extractor: &FeatureExtractor, images: &[ImageTensor]) -> Result<GaussianStats> {
    if images.len() < 2 {
        return Err(arg_err("fit_stats needs at least two images"));
    }
    let feats = images.iter().map(|im| extractor.pooled(im)).collect::<Result<Vec<_>>>()?;
    GaussianStats::from_samples(&feats)
}

fn symmetric_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
}

fn check_psd(eig: &SymmetricEigen<f64, nalgebra::Dyn>, what: &str) -> Result<()> {
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min < -PSD_TOLERANCE * max.max(1.0) {
        return Err(Error::InvalidArgument(format!("{what} covariance is not PSD (eigenvalue {min})")));
    }
    Ok(())
}

/// `‖μ_p−μ_q‖² + Tr(Σ_p + Σ_q − 2(Σ_pΣ_q)^{1/2})`, with the trace term
/// computed as `Tr((Σ_p^{1/2} Σ_q Σ_p^{1/2})^{1/2})` and negative
/// eigenvalues clipped at zero.
pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    let d = p.mean.len();
    if q.mean.len() != d || p.cov.nrows() != d || q.cov.nrows() != d {
        return Err(shape_err(format!("stats dimension {} vs {}", d, q.mean.len())));
    }
    let ep = symmetric_eigen(&p.cov);
    check_psd(&ep, "first")?;
    check_psd(&symmetric_eigen(&q.cov), "second")?;
    let sqrt_vals = ep.eigenvalues.map(|v| v.max(0.0).sqrt());
    let sqrt_p = &ep.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * ep.eigenvectors.transpose();
    let inner = &sqrt_p * &q.cov * &sqrt_p;
    let tr_sqrt: f64 = symmetric_eigen(&inner).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = &p.mean - &q.mean;
    let value = diff.dot(&diff) + p.cov.trace() + q.cov.trace() - 2.0 * tr_sqrt;
    Ok(value.max(0.0))
}

/// Sum of perceptual distances between consecutive images along the linear
/// latent path from `a` to `b`, split into `n_segments` equal steps.
pub fn ppl_segments(
    g: &Generator,
    extractor: &FeatureExtractor,
    a: &StyleSource,
    b: &StyleSource,
    n_segments: usize,
) -> Result<f32> {
    Ok(ppl_segment_terms(g, extractor, a, b, n_segments)?.iter().sum())
}

/// Individual segment distances of [`ppl_segments`].
pub fn ppl_segment_terms(
    g: &Generator,
    extractor: &FeatureExtractor,
    a: &StyleSource,
    b: &StyleSource,
    n_segments: usize,
) -> Result<Vec<f32>> {
    if a.space() != b.space() {
        return Err(arg_err(format!("path endpoints in different spaces ({} vs {})", a.space(), b.space())));
    }
    if n_segments == 0 {
        return Err(arg_err("need at least one segment"));
    }
    let images = (0..=n_segments)
        .map(|i| {
            let t = i as f32 / n_segments as f32;
            g.synthesize(&StyleSource::lerp(a, b, t)?)
        })
        .collect::<Result<Vec<_>>>()?;
    images
        .windows(2)
        .map(|w| extractor.perceptual_distance(&w[0], &w[1]))
        .collect()
}
