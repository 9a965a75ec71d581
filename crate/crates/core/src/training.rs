//! Toy adversarial training on a procedural dataset: soft ellipses on
//! gradient backgrounds, a small strided-convolution discriminator,
//! non-saturating logistic losses with a lazy R1 penalty, and style mixing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ModulationMode;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::latent::{sample_correlated_z, sample_independent_z, LatentMatrix, LatentSpace};
use crate::mapper::MapperTrace;
use crate::ops::{
    accumulate_channel_sums, add_channel_bias, conv_backward_data, conv_backward_weight, conv_forward, im2col,
    leaky_backward, leaky_grad, leaky_inplace, Adam, AdamParams, ConvGeom,
};
use crate::perception::{fit_stats, frechet_distance, FeatureExtractor};
use crate::png_io::{export_png, grid};
use crate::rng::{split_seed, SeededRng};
use crate::synthesis::{Generator, GeneratorGrads, StyleSource};
use crate::tensor::ImageTensor;

const SLOPE: f32 = 0.2;

/// Deterministic procedural images; item `i` depends only on `(seed, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub size: usize,
    pub resolution: usize,
}

impl SyntheticDataset {
    pub fn new(seed: u64, size: usize, resolution: usize) -> Result<Self> {
        if size == 0 || resolution == 0 {
            return Err(arg_err("dataset size and resolution must be positive"));
        }
        Ok(Self { seed, size, resolution })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn image(&self, index: usize) -> ImageTensor {
        let mut rng = SeededRng::new(split_seed(self.seed, index as u64));
        let r = self.resolution;
        let color = |rng: &mut SeededRng| [0; 3].map(|_| 2.0 * rng.uniform() - 1.0);
        let c0 = color(&mut rng);
        let c1 = color(&mut rng);
        let angle = rng.uniform() * std::f32::consts::TAU;
        let (dy, dx) = angle.sin_cos();
        let mut data = vec![0.0; 3 * r * r];
        let coord = |i: usize| (i as f32 + 0.5) / r as f32 * 2.0 - 1.0;
        for y in 0..r {
            for x in 0..r {
                let t = ((coord(x) * dx + coord(y) * dy) / std::f32::consts::SQRT_2 + 1.0) * 0.5;
                for c in 0..3 {
                    data[(c * r + y) * r + x] = c0[c] + (c1[c] - c0[c]) * t;
                }
            }
        }
        let n_ellipses = rng.range(1, 4);
        for _ in 0..n_ellipses {
            let (cx, cy) = (rng.uniform() * 1.4 - 0.7, rng.uniform() * 1.4 - 0.7);
            let (rx, ry) = (0.15 + 0.45 * rng.uniform(), 0.15 + 0.45 * rng.uniform());
            let col = color(&mut rng);
            let sharpness = 4.0 + 8.0 * rng.uniform();
            for y in 0..r {
                for x in 0..r {
                    let q = ((coord(x) - cx) / rx).powi(2) + ((coord(y) - cy) / ry).powi(2);
                    let alpha = 1.0 / (1.0 + (sharpness * (q - 1.0)).exp());
                    for c in 0..3 {
                        let v = &mut data[(c * r + y) * r + x];
                        *v += alpha * (col[c] - *v);
                    }
                }
            }
        }
        ImageTensor::new(3, r, r, data).expect("dataset image shape")
    }

    pub fn batch(&self, indices: &[usize]) -> Vec<ImageTensor> {
        indices.iter().map(|&i| self.image(i % self.size)).collect()
    }

    /// Per-channel `(mean, std)` over the first `n` items.
    pub fn channel_moments(&self, n: usize) -> Vec<(f32, f32)> {
        pooled_channel_moments(&self.batch(&(0..n.min(self.size)).collect::<Vec<_>>()))
    }
}

/// Per-channel `(mean, std)` pooled over every pixel of every image.
pub fn pooled_channel_moments(images: &[ImageTensor]) -> Vec<(f32, f32)> {
    let Some(first) = images.first() else { return Vec::new() };
    (0..first.channels)
        .map(|c| {
            let (mut s, mut s2, mut n) = (0.0f64, 0.0f64, 0usize);
            for img in images {
                for &v in img.plane(c) {
                    s += v as f64;
                    s2 += (v as f64) * (v as f64);
                    n += 1;
                }
            }
            let m = s / n as f64;
            (m as f32, (s2 / n as f64 - m * m).max(0.0).sqrt() as f32)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct DiscStage {
    geom: ConvGeom,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

/// Strided 3×3 convolutions followed by a linear logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    stages: Vec<DiscStage>,
    head_weight: Vec<f32>,
    head_bias: f32,
}

pub const DISCRIMINATOR_CHANNELS: [usize; 4] = [3, 32, 64, 128];

#[derive(Debug, Clone)]
pub struct DiscTrace {
    cols: Vec<Vec<f32>>,
    pre: Vec<Vec<f32>>,
    features: Vec<f32>,
}

/// Parameter gradients, laid out like [`Discriminator::param_buffers_mut`].
#[derive(Debug, Clone)]
pub struct DiscGrads {
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
    pub head_weight: Vec<f32>,
    pub head_bias: Vec<f32>,
}

impl DiscGrads {
    pub fn buffers(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        out.extend(self.weights.iter().map(Vec::as_slice));
        out.extend(self.biases.iter().map(Vec::as_slice));
        out.push(&self.head_weight);
        out.push(&self.head_bias);
        out
    }
}

impl Discriminator {
    /// He-initialized weights for `resolution×resolution` RGB input.
    pub fn new(resolution: usize, rng: &mut SeededRng) -> Result<Self> {
        let n = DISCRIMINATOR_CHANNELS.len() - 1;
        if !resolution.is_multiple_of(1 << n) || resolution < (1 << n) {
            return Err(arg_err(format!("discriminator needs a resolution divisible by {}", 1 << n)));
        }
        let mut res = resolution;
        let stages = DISCRIMINATOR_CHANNELS
            .windows(2)
            .map(|c| {
                let geom = ConvGeom { c_in: c[0], c_out: c[1], h: res, w: res, k: 3, stride: 2, pad: 1 };
                res = geom.h_out();
                let std = (2.0 / (c[0] * 9) as f32).sqrt();
                let weight = rng.normal_vec(geom.weight_len()).into_iter().map(|v| v * std).collect();
                DiscStage { geom, weight, bias: vec![0.0; c[1]] }
            })
            .collect::<Vec<_>>();
        let feat = DISCRIMINATOR_CHANNELS[n] * res * res;
        let std = (1.0 / feat as f32).sqrt();
        let head_weight = rng.normal_vec(feat).into_iter().map(|v| v * std).collect();
        Ok(Self { stages, head_weight, head_bias: 0.0 })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let g = &self.stages[0].geom;
        [g.c_in, g.h, g.w]
    }

    pub fn zero_grads(&self) -> DiscGrads {
        DiscGrads {
            weights: self.stages.iter().map(|s| vec![0.0; s.weight.len()]).collect(),
            biases: self.stages.iter().map(|s| vec![0.0; s.bias.len()]).collect(),
            head_weight: vec![0.0; self.head_weight.len()],
            head_bias: vec![0.0],
        }
    }

    pub fn param_buffers_mut(&mut self) -> Vec<&mut [f32]> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for s in self.stages.iter_mut() {
            weights.push(s.weight.as_mut_slice());
            biases.push(s.bias.as_mut_slice());
        }
        let mut out = weights;
        out.extend(biases);
        out.push(&mut self.head_weight);
        out.push(std::slice::from_mut(&mut self.head_bias));
        out
    }

    pub fn num_params(&self) -> usize {
        self.stages.iter().map(|s| s.weight.len() + s.bias.len()).sum::<usize>() + self.head_weight.len() + 1
    }

    fn check(&self, img: &ImageTensor) -> Result<()> {
        if img.shape() != self.input_shape() {
            return Err(shape_err(format!("discriminator expects {:?}, got {:?}", self.input_shape(), img.shape())));
        }
        Ok(())
    }

    pub fn logit(&self, img: &ImageTensor) -> Result<f32> {
        Ok(self.forward(img)?.0)
    }

    pub fn forward(&self, img: &ImageTensor) -> Result<(f32, DiscTrace)> {
        self.check(img)?;
        let mut x = img.data.clone();
        let mut cols = Vec::with_capacity(self.stages.len());
        let mut pre = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let (mut y, c) = conv_forward(&x, &s.weight, &s.geom);
            add_channel_bias(&mut y, &s.bias);
            pre.push(y.clone());
            leaky_inplace(&mut y, SLOPE);
            cols.push(c);
            x = y;
        }
        let logit = self.head_bias + x.iter().zip(&self.head_weight).map(|(a, b)| a * b).sum::<f32>();
        Ok((logit, DiscTrace { cols, pre, features: x }))
    }

    /// Reverse pass for an upstream logit gradient; returns the input gradient
    /// and accumulates parameter gradients when `grads` is given.
    pub fn backward(&self, trace: &DiscTrace, g_logit: f32, mut grads: Option<&mut DiscGrads>) -> Vec<f32> {
        if let Some(g) = grads.as_deref_mut() {
            g.head_bias[0] += g_logit;
            g.head_weight.iter_mut().zip(&trace.features).for_each(|(d, f)| *d += g_logit * f);
        }
        let mut gx: Vec<f32> = self.head_weight.iter().map(|w| w * g_logit).collect();
        for (i, s) in self.stages.iter().enumerate().rev() {
            leaky_backward(&trace.pre[i], &mut gx, SLOPE);
            if let Some(g) = grads.as_deref_mut() {
                conv_backward_weight(&trace.cols[i], &gx, &s.geom, &mut g.weights[i]);
                accumulate_channel_sums(&gx, &mut g.biases[i]);
            }
            gx = conv_backward_data(&gx, &s.weight, &s.geom);
        }
        gx
    }

    /// `‖∇ₓ D(x)‖²` for one image. With the rectifier masks of the forward
    /// pass held fixed, `∇ₓ D` is a linear chain in each weight, so the
    /// parameter gradient of `scale·‖∇ₓ D‖²` is exact almost everywhere.
    pub fn grad_penalty(&self, img: &ImageTensor, scale: f32, grads: Option<&mut DiscGrads>) -> Result<f32> {
        let (_, trace) = self.forward(img)?;
        let masks: Vec<Vec<f32>> = trace.pre.iter().map(|p| p.iter().map(|&v| leaky_grad(v, SLOPE)).collect()).collect();
        // Forward over the reverse chain, keeping each masked input.
        let mut u = self.head_weight.clone();
        let mut masked = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate().rev() {
            u.iter_mut().zip(&masks[i]).for_each(|(a, m)| *a *= m);
            masked.push(u.clone());
            u = conv_backward_data(&u, &s.weight, &s.geom);
        }
        masked.reverse();
        let penalty: f32 = u.iter().map(|v| v * v).sum();
        if let Some(g) = grads {
            let mut a: Vec<f32> = u.iter().map(|v| 2.0 * scale * v).collect();
            for (i, s) in self.stages.iter().enumerate() {
                conv_backward_weight(&im2col(&a, &s.geom), &masked[i], &s.geom, &mut g.weights[i]);
                let (mut b, _) = conv_forward(&a, &s.weight, &s.geom);
                b.iter_mut().zip(&masks[i]).for_each(|(v, m)| *v *= m);
                a = b;
            }
            g.head_weight.iter_mut().zip(&a).for_each(|(d, v)| *d += v);
        }
        Ok(penalty)
    }
}

pub fn softplus(x: f32) -> f32 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Non-saturating logistic losses `(g_loss, d_loss)` for one pair of logits.
pub fn gan_losses(d_real: f32, d_fake: f32) -> (f32, f32) {
    (softplus(-d_fake), softplus(d_fake) + softplus(-d_real))
}

/// With probability `prob`, a crossover `c` uniform on `1..L−1`; layers
/// below it read the first source and the rest the second.
pub fn mixing_crossover(rng: &mut SeededRng, num_layers: usize, prob: f32) -> Result<Option<usize>> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(arg_err(format!("mixing probability {prob} outside [0, 1]")));
    }
    if num_layers < 2 || !rng.bernoulli(prob) {
        return Ok(None);
    }
    Ok(Some(rng.range(1, num_layers)))
}

/// Per-layer latent assignment under style-mixing regularization.
pub fn style_mixing_regularize<'a, T>(
    rng: &mut SeededRng,
    a: &'a T,
    b: &'a T,
    num_layers: usize,
    prob: f32,
) -> Result<Vec<&'a T>> {
    let c = mixing_crossover(rng, num_layers, prob)?.unwrap_or(num_layers);
    Ok((0..num_layers).map(|l| if l < c { a } else { b }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub g_adam: AdamParams,
    pub d_adam: AdamParams,
    /// Learning-rate multiplier for the mapping network.
    pub mapping_lr_mult: f32,
    pub style_mixing_prob: f32,
    /// Correlated rows for latent matrices; independent rows otherwise.
    pub correlated: bool,
    pub r1_gamma: f32,
    pub r1_interval: usize,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
    pub sample_interval: usize,
    /// 0 disables the feature-distance curve.
    pub fid_interval: usize,
    pub fid_samples: usize,
    pub dataset_size: usize,
    /// Half-life, in images, of the moving average of generator weights
    /// that becomes the output generator (0 keeps the raw weights).
    pub ema_halflife_images: f32,
    /// The half-life is capped at this fraction of the images seen so far.
    pub ema_rampup: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamParams { lr: 0.002, beta1: 0.0, beta2: 0.99, eps: 1e-8 };
        Self {
            steps: 2000,
            batch: 8,
            g_adam: adam,
            d_adam: adam,
            mapping_lr_mult: 0.01,
            style_mixing_prob: 0.9,
            correlated: true,
            r1_gamma: 1.0,
            r1_interval: 16,
            log_interval: 50,
            checkpoint_interval: 500,
            sample_interval: 500,
            fid_interval: 0,
            fid_samples: 128,
            dataset_size: 4096,
            ema_halflife_images: 1000.0,
            ema_rampup: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.style_mixing_prob) {
            return Err(arg_err("style_mixing_prob must lie in [0, 1]"));
        }
        if self.batch == 0 || self.r1_interval == 0 || self.dataset_size == 0 {
            return Err(arg_err("batch, r1_interval and dataset_size must be positive"));
        }
        if self.ema_halflife_images < 0.0 || self.ema_rampup < 0.0 {
            return Err(arg_err("EMA settings must be non-negative"));
        }
        if self.r1_gamma < 0.0 || self.mapping_lr_mult <= 0.0 {
            return Err(arg_err("r1_gamma must be non-negative and mapping_lr_mult positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub g_loss: f32,
    pub d_loss: f32,
    /// Mean `‖∇ₓ D‖²` on real images at lazy-regularization steps.
    pub r1: Option<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<LossRecord>,
    pub fid_curve: Vec<(usize, f64)>,
    pub outputs: Vec<PathBuf>,
}

impl TrainReport {
    pub fn all_finite(&self) -> bool {
        self.records.iter().all(|r| r.g_loss.is_finite() && r.d_loss.is_finite() && r.r1.is_none_or(f32::is_finite))
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("step,g_loss,d_loss,r1\n");
        for r in &self.records {
            let r1 = r.r1.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(s, "{},{},{},{}", r.step, r.g_loss, r.d_loss, r1);
        }
        s
    }
}

/// One generator sample with everything needed for its reverse pass.
struct Sample {
    src: StyleSource,
    crossover: usize,
    z: [Vec<f32>; 2],
    traces: [MapperTrace; 2],
}

/// Draws one latent per the generator's mode, mapped and style-mixed.
fn draw_sample(g: &Generator, cfg: &TrainConfig, rng: &mut SeededRng) -> Result<Sample> {
    let gc = &g.config;
    let (d, l) = (gc.latent_dim, gc.num_layers());
    let overparam = gc.modulation_mode == ModulationMode::Overparam;
    let rows = if overparam { gc.latent_rows } else { 1 };
    let draw = |rng: &mut SeededRng| -> Vec<f32> {
        if !overparam {
            rng.normal_vec(d)
        } else if cfg.correlated {
            sample_correlated_z(rng, rows, d).data
        } else {
            sample_independent_z(rng, rows, d).data
        }
    };
    let za = draw(rng);
    let zb = draw(rng);
    let crossover = mixing_crossover(rng, l, cfg.style_mixing_prob)?.unwrap_or(l);
    let (wa, ta) = g.mapper.forward_rows(&za, rows);
    let (wb, tb) = g.mapper.forward_rows(&zb, rows);
    let pick = |layer: usize| if layer < crossover { &wa } else { &wb };
    let src = if overparam {
        StyleSource::MatrixPlus(
            (0..l).map(|i| LatentMatrix::new(rows, d, pick(i).clone(), LatentSpace::W)).collect::<Result<_>>()?,
        )
    } else {
        StyleSource::VectorPlus((0..l).map(|i| pick(i).clone()).collect())
    };
    Ok(Sample { src, crossover, z: [za, zb], traces: [ta, tb] })
}

/// Routes a latent gradient back through the mapper for both mixed sources.
fn mapper_backward(g: &Generator, s: &Sample, grad: &StyleSource, grads: &mut GeneratorGrads) {
    let mut gw = [vec![0.0f32; s.z[0].len()], vec![0.0f32; s.z[1].len()]];
    let mut add = |layer: usize, v: &[f32]| {
        let dst = &mut gw[usize::from(layer >= s.crossover)];
        dst.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    };
    match grad {
        StyleSource::VectorPlus(ws) => ws.iter().enumerate().for_each(|(l, v)| add(l, v)),
        StyleSource::MatrixPlus(ms) => ms.iter().enumerate().for_each(|(l, m)| add(l, &m.data)),
        _ => unreachable!("training samples are layered"),
    }
    for k in 0..2 {
        if gw[k].iter().any(|&v| v != 0.0) {
            g.mapper.backward_rows(&s.traces[k], &gw[k], Some(&mut grads.mapper));
        }
    }
}

/// Fresh generator images from the training latent distribution, without mixing.
pub fn sample_images(g: &Generator, n: usize, rng: &mut SeededRng) -> Result<Vec<ImageTensor>> {
    let cfg = TrainConfig { style_mixing_prob: 0.0, ..TrainConfig::default() };
    (0..n).map(|_| g.synthesize(&draw_sample(g, &cfg, rng)?.src)).collect()
}

fn check_finite(what: &str, step: usize, v: f32) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at step {step}")))
    }
}

/// Alternating discriminator/generator Adam updates. On success `g` holds
/// the moving average of the generator weights (see
/// [`TrainConfig::ema_halflife_images`]) with a refreshed `μ_W`.
///
/// With `out_dir`, writes `curves.csv`, periodic `samples_<step>.png`
/// grids and `checkpoint/`. A non-finite loss stops training; the last
/// finite generator is saved (when `out_dir` is set) and the error returned.
pub fn train(
    g: &mut Generator,
    d: &mut Discriminator,
    data: &SyntheticDataset,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if g.output_shape() != d.input_shape() || data.resolution != g.output_shape()[1] {
        return Err(shape_err("generator, discriminator and dataset resolutions differ"));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let g_grad_len: Vec<usize> = GeneratorGrads::zeros(g).buffers().iter().map(|b| b.len()).collect();
    let n_mapper_buffers = 2 * g.mapper.layers.len();
    let mut g_opt: Vec<Adam> = g_grad_len
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut p = cfg.g_adam;
            if i < n_mapper_buffers {
                p.lr *= cfg.mapping_lr_mult;
            }
            Adam::new(p, n)
        })
        .collect();
    let mut d_opt: Vec<Adam> = d.zero_grads().buffers().iter().map(|b| Adam::new(cfg.d_adam, b.len())).collect();
    let mut report = TrainReport::default();
    let mut ema = g.clone();
    let fixed_seed = rng.child(0x5a4d).seed();
    let extractor = (cfg.fid_interval > 0).then(FeatureExtractor::default);
    let reference = match &extractor {
        Some(e) => Some(fit_stats(e, &data.batch(&(0..cfg.fid_samples).collect::<Vec<_>>()))?),
        None => None,
    };

    let result = (|| -> Result<()> {
        for step in 0..cfg.steps {
            let b = cfg.batch as f32;
            // Discriminator.
            let mut dg = d.zero_grads();
            let mut d_loss = 0.0;
            let real = data.batch(&(0..cfg.batch).map(|_| rng.range(0, data.size)).collect::<Vec<_>>());
            for img in &real {
                let fake = g.synthesize(&draw_sample(g, cfg, rng)?.src)?;
                let (lr, tr) = d.forward(img)?;
                let (lf, tf) = d.forward(&fake)?;
                d_loss += gan_losses(lr, lf).1 / b;
                d.backward(&tr, -sigmoid(-lr) / b, Some(&mut dg));
                d.backward(&tf, sigmoid(lf) / b, Some(&mut dg));
            }
            check_finite("discriminator loss", step, d_loss)?;
            let mut r1 = None;
            if cfg.r1_gamma > 0.0 && step % cfg.r1_interval == 0 {
                let scale = cfg.r1_gamma * 0.5 * cfg.r1_interval as f32 / b;
                let mut total = 0.0;
                for img in &real {
                    total += d.grad_penalty(img, scale, Some(&mut dg))? / b;
                }
                check_finite("R1 penalty", step, total)?;
                r1 = Some(total);
            }
            for ((p, gr), opt) in d.param_buffers_mut().into_iter().zip(dg.buffers()).zip(&mut d_opt) {
                opt.step(p, gr);
            }

            // Generator.
            let mut gg = GeneratorGrads::zeros(g);
            let mut g_loss = 0.0;
            for _ in 0..cfg.batch {
                let s = draw_sample(g, cfg, rng)?;
                let (fake, trace) = g.forward(&s.src)?;
                let (lf, tf) = d.forward(&fake)?;
                g_loss += gan_losses(0.0, lf).0 / b;
                let gimg = d.backward(&tf, -sigmoid(-lf) / b, None);
                let glat = g.backward(&s.src, &trace, &gimg, Some(&mut gg));
                mapper_backward(g, &s, &glat, &mut gg);
            }
            check_finite("generator loss", step, g_loss)?;
            for ((p, gr), opt) in g.param_buffers_mut().into_iter().zip(gg.buffers()).zip(&mut g_opt) {
                opt.step(p, gr);
            }
            if g.param_buffers_mut().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("generator parameters at step {step}")));
            }
            if cfg.ema_halflife_images > 0.0 {
                let seen = ((step + 1) * cfg.batch) as f32;
                let mut halflife = cfg.ema_halflife_images;
                if cfg.ema_rampup > 0.0 {
                    halflife = halflife.min(seen * cfg.ema_rampup);
                }
                let beta = 0.5f32.powf(cfg.batch as f32 / halflife.max(1e-8));
                for (e, p) in ema.param_buffers_mut().into_iter().zip(g.param_buffers_mut()) {
                    e.iter_mut().zip(p.iter()).for_each(|(a, b)| *a = b + beta * (*a - b));
                }
            } else {
                ema.clone_from(g);
            }
            report.records.push(LossRecord { step, g_loss, d_loss, r1 });

            let done = step + 1;
            if let (Some(e), Some(refstats)) = (&extractor, &reference) {
                if done % cfg.fid_interval == 0 {
                    let imgs = sample_images(&ema, cfg.fid_samples, &mut SeededRng::new(fixed_seed))?;
                    report.fid_curve.push((done, frechet_distance(&fit_stats(e, &imgs)?, refstats)?));
                }
            }
            if let Some(dir) = out_dir {
                if cfg.sample_interval > 0 && done % cfg.sample_interval == 0 {
                    let imgs = sample_images(&ema, 16, &mut SeededRng::new(fixed_seed))?;
                    let path = dir.join(format!("samples_{done:06}.png"));
                    export_png(&grid(&imgs, 4)?, &path)?;
                    report.outputs.push(path);
                }
                if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < cfg.steps {
                    ema.save(dir.join("checkpoint"))?;
                }
            }
        }
        Ok(())
    })();

    if let Err(e) = result {
        if let Some(dir) = out_dir {
            ema.save(dir.join("checkpoint"))?;
            std::fs::write(dir.join("curves.csv"), report.curves_csv())?;
        }
        *g = ema;
        return Err(e);
    }
    *g = ema;
    if cfg.steps > 0 {
        g.refresh_mean_w(&mut rng.child(0x6d75), crate::latent::DEFAULT_MEAN_SAMPLES);
    }
    if let Some(dir) = out_dir {
        g.save(dir.join("checkpoint"))?;
        std::fs::write(dir.join("curves.csv"), report.curves_csv())?;
        report.outputs.push(dir.join("checkpoint"));
        report.outputs.push(dir.join("curves.csv"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GeneratorConfig;

    #[test]
    fn dataset_is_deterministic_and_bounded() {
        let ds = SyntheticDataset::new(3, 100, 32).unwrap();
        assert_eq!(ds.image(7), ds.image(7));
        assert_ne!(ds.image(7), ds.image(8));
        for i in 0..50 {
            assert!(ds.image(i).data.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn gan_loss_limits() {
        assert!((gan_losses(0.0, 0.0).0 - 2f32.ln()).abs() < 1e-7);
        assert!(gan_losses(80.0, -80.0).1 < 1e-20);
        assert!(softplus(100.0).is_finite() && softplus(-100.0) >= 0.0);
    }

    #[test]
    fn constant_discriminator_has_no_penalty() {
        let mut d = Discriminator::new(16, &mut SeededRng::new(0)).unwrap();
        for p in d.param_buffers_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        d.head_bias = 3.0;
        let img = ImageTensor::filled(3, 16, 16, 0.3);
        assert_eq!(d.grad_penalty(&img, 1.0, None).unwrap(), 0.0);
    }

    #[test]
    fn penalty_matches_input_gradient() {
        let d = Discriminator::new(16, &mut SeededRng::new(1)).unwrap();
        let img = SyntheticDataset::new(0, 4, 16).unwrap().image(1);
        let (_, t) = d.forward(&img).unwrap();
        let gx = d.backward(&t, 1.0, None);
        let n2: f32 = gx.iter().map(|v| v * v).sum();
        let p = d.grad_penalty(&img, 1.0, None).unwrap();
        assert!((n2 - p).abs() <= 1e-5 * p.max(1e-12), "{n2} vs {p}");
    }

    #[test]
    fn discriminator_gradients_match_differences() {
        let mut d = Discriminator::new(16, &mut SeededRng::new(2)).unwrap();
        let img = SyntheticDataset::new(0, 4, 16).unwrap().image(2);
        let mut grads = d.zero_grads();
        let (_, t) = d.forward(&img).unwrap();
        d.backward(&t, 1.0, Some(&mut grads));
        let mut pg = d.zero_grads();
        d.grad_penalty(&img, 1.0, Some(&mut pg)).unwrap();
        let flat_g: Vec<Vec<f32>> = grads.buffers().iter().map(|b| b.to_vec()).collect();
        let flat_p: Vec<Vec<f32>> = pg.buffers().iter().map(|b| b.to_vec()).collect();
        let mut rng = SeededRng::new(9);
        let h = 1e-3f32;
        let mut checked = 0;
        for _ in 0..60 {
            let buf = rng.range(0, flat_g.len());
            let idx = rng.range(0, flat_g[buf].len());
            let pattern = |d: &Discriminator| -> Vec<bool> {
                d.forward(&img).unwrap().1.pre.concat().iter().map(|&v| v > 0.0).collect()
            };
            let base = pattern(&d);
            let eval = |d: &mut Discriminator, delta: f32| -> (f64, f64, bool) {
                d.param_buffers_mut()[buf][idx] += delta;
                let same = pattern(d) == base;
                let out = (d.logit(&img).unwrap() as f64, d.grad_penalty(&img, 1.0, None).unwrap() as f64);
                d.param_buffers_mut()[buf][idx] -= delta;
                (out.0, out.1, same)
            };
            let (lp, pp, sp) = eval(&mut d, h);
            let (lm, pm, sm) = eval(&mut d, -h);
            if !(sp && sm) {
                continue;
            }
            checked += 1;
            let fd_l = (lp - lm) / (2.0 * h as f64);
            let fd_p = (pp - pm) / (2.0 * h as f64);
            let tol = |a: f64, b: f64| (a - b).abs() <= 2e-2 * a.abs().max(b.abs()) + 1e-3;
            assert!(tol(fd_l, flat_g[buf][idx] as f64), "logit buf {buf} idx {idx}: {fd_l} vs {}", flat_g[buf][idx]);
            assert!(tol(fd_p, flat_p[buf][idx] as f64), "penalty buf {buf} idx {idx}: {fd_p} vs {}", flat_p[buf][idx]);
        }
        assert!(checked >= 20, "only {checked} kink-free coordinates");
    }

    #[test]
    fn crossover_frequencies_are_uniform() {
        let mut rng = SeededRng::new(4);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[mixing_crossover(&mut rng, 4, 1.0).unwrap().unwrap()] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            assert!((c as f32 / 1e4 - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
        }
        assert!((0..100).all(|_| mixing_crossover(&mut rng, 4, 0.0).unwrap().is_none()));
        assert!(mixing_crossover(&mut rng, 4, 1.5).is_err());
    }

    #[test]
    fn mixing_keeps_first_layer_source() {
        let mut rng = SeededRng::new(5);
        for _ in 0..200 {
            let a = style_mixing_regularize(&mut rng, &0u8, &1u8, 5, 0.9).unwrap();
            assert_eq!(*a[0], 0);
            assert!(a.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    fn tiny(mode: ModulationMode) -> (Generator, Discriminator, SyntheticDataset) {
        let cfg = GeneratorConfig::pyramid(8, 8, &[8, 8, 8], mode);
        let mut rng = SeededRng::new(0);
        let g = Generator::new(cfg, &mut rng).unwrap();
        let d = Discriminator::new(8, &mut rng).unwrap();
        (g, d, SyntheticDataset::new(0, 64, 8).unwrap())
    }

    #[test]
    fn zero_steps_keep_initialization() {
        let (mut g, mut d, ds) = tiny(ModulationMode::Overparam);
        let g0 = g.clone();
        let cfg = TrainConfig { steps: 0, ..TrainConfig::default() };
        let r = train(&mut g, &mut d, &ds, &cfg, &mut SeededRng::new(1), None).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(g, g0);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig { steps: 4, batch: 2, r1_interval: 2, ..TrainConfig::default() };
        let run = || {
            let (mut g, mut d, ds) = tiny(ModulationMode::Overparam);
            let r = train(&mut g, &mut d, &ds, &cfg, &mut SeededRng::new(1), None).unwrap();
            (g.fingerprint(), r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.all_finite());
        assert!(ra.records[0].r1.is_some() && ra.records[1].r1.is_none());
    }
}
