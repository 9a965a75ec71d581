//! Optimization-based inversion into `w`, `w⁺`, `W` or `W⁺`.
//!
//! Parameters start at `μ_W` (or at random points of W), and each Adam step
//! is preceded by a truncation projection `v ← μ_W + ψ(v − μ_W)` while
//! truncation is active: for the first `trunc_disable_fraction·steps` steps,
//! or throughout when `keep_truncation_throughout` is set.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::latent::check_psi;
use crate::loss::ImageLoss;
use crate::ops::{Adam, AdamParams};
use crate::perception::{FeatureExtractor, PerceptualLoss};
use crate::rng::SeededRng;
use crate::synthesis::{loss_and_grad, Generator, Space, StyleSource};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Every vector/row set to `μ_W`.
    MeanW,
    /// Every vector/row set to `M(z)` for a fresh `z`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub space: Space,
    pub steps: usize,
    pub adam: AdamParams,
    pub psi: f32,
    pub trunc_disable_fraction: f32,
    pub keep_truncation_throughout: bool,
    /// Weight of the pixel MSE added to the perceptual loss.
    pub pixel_weight: f32,
    pub init: Init,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            space: Space::Matrix,
            steps: 1000,
            adam: AdamParams::default(),
            psi: 0.9,
            trunc_disable_fraction: 0.5,
            keep_truncation_throughout: false,
            pixel_weight: 0.0,
            init: Init::MeanW,
        }
    }
}

impl InversionConfig {
    pub fn for_space(space: Space) -> Self {
        Self { space, ..Self::default() }
    }

    /// Settings for degraded observations: truncation is never disabled.
    pub fn pulse(space: Space) -> Self {
        Self { space, keep_truncation_throughout: true, ..Self::default() }
    }

    /// Random initialization, no truncation.
    pub fn unregularized(space: Space) -> Self {
        Self { space, psi: 1.0, trunc_disable_fraction: 0.0, init: Init::Random, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(arg_err("steps must be at least 1"));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return Err(arg_err(format!("learning rate {} must be positive", self.adam.lr)));
        }
        check_psi(self.psi)?;
        if !(0.0..=1.0).contains(&self.trunc_disable_fraction) {
            return Err(arg_err(format!("disable fraction {} outside [0, 1]", self.trunc_disable_fraction)));
        }
        Ok(())
    }

    /// First step at which truncation is no longer applied.
    pub fn truncation_cutoff(&self) -> usize {
        if self.keep_truncation_throughout {
            self.steps
        } else {
            (self.trunc_disable_fraction as f64 * self.steps as f64).round() as usize
        }
    }

    pub fn truncation_active(&self, step: usize) -> bool {
        self.psi < 1.0 && step < self.truncation_cutoff()
    }
}

/// Per-step instrumentation passed to an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub step: usize,
    pub loss: f32,
    pub truncation_applied: bool,
    /// Largest vector/row distance from `μ_W` before and after truncation.
    pub deviation_before: f32,
    pub deviation_after: f32,
}

#[derive(Debug, Clone)]
pub struct InversionTrace {
    /// Loss evaluated at each step, before that step's update.
    pub losses: Vec<f32>,
    pub truncated: Vec<bool>,
    pub truncation_disabled_at: Option<usize>,
    pub final_source: StyleSource,
    pub final_image: ImageTensor,
    /// Loss of the final parameters.
    pub final_loss: f32,
}

impl InversionTrace {
    /// First step whose loss is at or below `threshold`.
    pub fn steps_to_reach(&self, threshold: f32) -> Option<usize> {
        self.losses
            .iter()
            .chain(std::iter::once(&self.final_loss))
            .position(|&l| l <= threshold)
    }
}

pub type Observer<'o> = &'o mut dyn FnMut(&StepInfo);

/// Minimizes `loss(S(params))` over the latent space selected by `cfg`.
pub fn invert_with_loss(
    g: &Generator,
    loss: &dyn ImageLoss,
    cfg: &InversionConfig,
    rng: &mut SeededRng,
    mut observer: Option<Observer<'_>>,
) -> Result<InversionTrace> {
    cfg.validate()?;
    let mu = &g.mean_w;
    let mut src = match cfg.init {
        Init::MeanW => StyleSource::filled(cfg.space, &g.config, mu),
        Init::Random => StyleSource::random(cfg.space, g, rng),
    };
    g.validate_source(&src)?;
    let mut adam = Adam::new(cfg.adam, src.num_params());
    let mut params = src.flat();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut truncated = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let active = cfg.truncation_active(step);
        let (mut before, mut after) = (0.0, 0.0);
        if active {
            before = src.max_deviation(mu);
            src.truncate_in_place(mu, cfg.psi);
            after = src.max_deviation(mu);
            params = src.flat();
        }
        let (value, grad) = loss_and_grad(g, &src, loss).map_err(|e| match e {
            Error::NonFinite(msg) => {
                let tail = &losses[losses.len().saturating_sub(5)..];
                Error::NonFinite(format!("{msg} at step {step}; preceding losses {tail:?}"))
            }
            other => other,
        })?;
        if let Some(obs) = observer.as_deref_mut() {
            obs(&StepInfo { step, loss: value, truncation_applied: active, deviation_before: before, deviation_after: after });
        }
        losses.push(value);
        truncated.push(active);
        adam.step(&mut params, &grad.flat());
        src.set_flat(&params);
    }
    let img = g.synthesize(&src)?;
    let (final_loss, _) = loss.evaluate(&img)?;
    let cutoff = cfg.truncation_cutoff();
    Ok(InversionTrace {
        losses,
        truncated,
        truncation_disabled_at: (cfg.psi < 1.0 && cutoff < cfg.steps).then_some(cutoff),
        final_source: src,
        final_image: img,
        final_loss,
    })
}

/// Inversion of `target` under the perceptual loss (plus `cfg.pixel_weight`·MSE).
pub fn invert(
    g: &Generator,
    target: &ImageTensor,
    cfg: &InversionConfig,
    extractor: &FeatureExtractor,
    rng: &mut SeededRng,
) -> Result<InversionTrace> {
    check_target(g, target)?;
    let loss = PerceptualLoss::new(extractor, target.clone(), cfg.pixel_weight)?;
    invert_with_loss(g, &loss, cfg, rng, None)
}

fn check_target(g: &Generator, target: &ImageTensor) -> Result<()> {
    if target.shape() != g.output_shape() {
        return Err(shape_err(format!(
            "target {:?} does not match generator output {:?}",
            target.shape(),
            g.output_shape()
        )));
    }
    Ok(())
}

/// Observation model applied to generated images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationOp {
    Identity,
    /// Nearest-neighbour downsampling: each `factor×factor` block keeps the
    /// pixel at offset `(factor/2, factor/2)`.
    Downsample { factor: usize },
}

impl DegradationOp {
    pub fn factor(&self) -> usize {
        match *self {
            DegradationOp::Identity => 1,
            DegradationOp::Downsample { factor } => factor,
        }
    }

    pub fn output_shape(&self, shape: [usize; 3]) -> Result<[usize; 3]> {
        let f = self.factor();
        if f == 0 || !shape[1].is_multiple_of(f) || !shape[2].is_multiple_of(f) {
            return Err(arg_err(format!("factor {f} does not divide {}x{}", shape[1], shape[2])));
        }
        Ok([shape[0], shape[1] / f, shape[2] / f])
    }

    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let [c, h, w] = self.output_shape(img.shape())?;
        let f = self.factor();
        let off = f / 2;
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(img.data[ch * img.height * img.width + (y * f + off) * img.width + x * f + off]);
                }
            }
        }
        ImageTensor::new(c, h, w, data)
    }

    /// Nearest-neighbour enlargement by the same factor.
    pub fn upsample(&self, low: &ImageTensor) -> ImageTensor {
        let f = self.factor();
        let (h, w) = (low.height * f, low.width * f);
        let mut data = Vec::with_capacity(low.channels * h * w);
        for ch in 0..low.channels {
            for y in 0..h {
                for x in 0..w {
                    data.push(low.data[ch * low.height * low.width + (y / f) * low.width + x / f]);
                }
            }
        }
        ImageTensor { channels: low.channels, height: h, width: w, data }
    }

    /// `upsample(apply(img))`: every block replaced by its sampled pixel.
    pub fn project(&self, img: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.upsample(&self.apply(img)?))
    }

    /// Adjoint of [`DegradationOp::project`].
    fn project_backward(&self, grad: &[f32], shape: [usize; 3]) -> Vec<f32> {
        let f = self.factor();
        if f == 1 {
            return grad.to_vec();
        }
        let [c, h, w] = shape;
        let off = f / 2;
        let mut out = vec![0.0; grad.len()];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let src = ch * h * w + (y / f * f + off) * w + x / f * f + off;
                    out[src] += grad[ch * h * w + y * w + x];
                }
            }
        }
        out
    }
}

/// A loss evaluated on degraded images. Low-resolution images are compared
/// in a nearest-upsampled frame so any image loss at the generator's
/// resolution applies unchanged; with [`DegradationOp::Identity`] this is
/// exactly the inner loss.
pub struct DegradedLoss<'a> {
    pub op: DegradationOp,
    pub inner: &'a dyn ImageLoss,
}

impl ImageLoss for DegradedLoss<'_> {
    fn evaluate(&self, img: &ImageTensor) -> Result<(f32, Vec<f32>)> {
        if self.op == DegradationOp::Identity {
            return self.inner.evaluate(img);
        }
        let projected = self.op.project(img)?;
        let (value, g) = self.inner.evaluate(&projected)?;
        Ok((value, self.op.project_backward(&g, img.shape())))
    }
}

/// Inversion of a degraded observation `y_low = deg(y)`: the generated image
/// is degraded the same way before comparison, and truncation stays on.
pub fn invert_degraded(
    g: &Generator,
    y_low: &ImageTensor,
    deg: DegradationOp,
    cfg: &InversionConfig,
    extractor: &FeatureExtractor,
    rng: &mut SeededRng,
) -> Result<InversionTrace> {
    if !cfg.keep_truncation_throughout {
        return Err(arg_err("degraded inversion requires keep_truncation_throughout"));
    }
    let expected = deg.output_shape(g.output_shape())?;
    if y_low.shape() != expected {
        return Err(shape_err(format!("observation {:?} != degraded output {:?}", y_low.shape(), expected)));
    }
    let inner = PerceptualLoss::new(extractor, deg.upsample(y_low), cfg.pixel_weight)?;
    let loss = DegradedLoss { op: deg, inner: &inner };
    invert_with_loss(g, &loss, cfg, rng, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondeterminismReport {
    pub space: Space,
    pub restarts: usize,
    pub midpoints: usize,
    /// Mean pairwise perceptual distance among latent-midpoint images.
    pub mean_pairwise_distance: f32,
}

/// Inverts `y` once per seed and measures the spread of the images at the
/// latent midpoints of every pair of solutions.
pub fn nondeterminism_for_space(
    g: &Generator,
    y: &ImageTensor,
    cfg: &InversionConfig,
    extractor: &FeatureExtractor,
    seeds: &[u64],
) -> Result<NondeterminismReport> {
    if cfg.init != Init::Random || cfg.truncation_cutoff() > 0 && cfg.psi < 1.0 {
        return Err(arg_err("non-determinism runs need random init and no truncation"));
    }
    check_target(g, y)?;
    let loss = PerceptualLoss::new(extractor, y.clone(), cfg.pixel_weight)?;
    let solutions = seeds
        .iter()
        .map(|&s| invert_with_loss(g, &loss, cfg, &mut SeededRng::new(s), None).map(|t| t.final_source))
        .collect::<Result<Vec<_>>>()?;
    let mut midpoints = Vec::new();
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            midpoints.push(g.synthesize(&StyleSource::lerp(&solutions[i], &solutions[j], 0.5)?)?);
        }
    }
    let mut total = 0.0f64;
    let mut pairs = 0usize;
    for i in 0..midpoints.len() {
        for j in i + 1..midpoints.len() {
            total += extractor.perceptual_distance(&midpoints[i], &midpoints[j])? as f64;
            pairs += 1;
        }
    }
    Ok(NondeterminismReport {
        space: cfg.space,
        restarts: seeds.len(),
        midpoints: midpoints.len(),
        mean_pairwise_distance: if pairs == 0 { 0.0 } else { (total / pairs as f64) as f32 },
    })
}

/// Runs [`nondeterminism_for_space`] for the baseline `w⁺` and the
/// overparameterized `W`, with restart seeds derived from `rng`.
pub fn nondeterminism_experiment(
    g: &Generator,
    y: &ImageTensor,
    n_restarts: usize,
    cfg_unregularized: &InversionConfig,
    extractor: &FeatureExtractor,
    rng: &SeededRng,
) -> Result<Vec<NondeterminismReport>> {
    let seeds: Vec<u64> = (0..n_restarts as u64).map(|i| rng.child(i).seed()).collect();
    [Space::VectorPlus, Space::Matrix]
        .into_iter()
        .map(|space| {
            let cfg = InversionConfig { space, ..cfg_unregularized.clone() };
            nondeterminism_for_space(g, y, &cfg, extractor, &seeds)
        })
        .collect()
}
