//! Synthesis network: learned constant, style-modulated convolutions,
//! nearest upsampling and a final 1×1 RGB projection, with a reverse pass
//! that yields gradients w.r.t. the style source and (optionally) every
//! generator parameter.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{GeneratorConfig, ModulationMode};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::latent::{sample_correlated_z, truncate_rows_in_place, LatentMatrix, LatentSpace, DEFAULT_MEAN_SAMPLES};
use crate::loss::ImageLoss;
use crate::mapper::{AffineProjection, Dense, MappingNetwork, LEAKY_SLOPE};
use crate::modulation::{
    channel_norms, demodulate_backward, demodulate_in_place, modulate_baseline, modulate_overparam,
    style_grad, StyleMatrix, DEMOD_EPS,
};
use crate::ops::{
    accumulate_channel_sums, add_channel_bias, conv_backward_data, conv_backward_weight, conv_forward,
    leaky_backward, leaky_inplace, upsample2x, upsample2x_backward, ConvGeom,
};
use crate::rng::SeededRng;
use crate::tensor::{load_tensor, save_tensor, ImageTensor, Tensor};

/// The four latent parameterizations an image can be synthesized from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    /// `w`: one vector shared by all layers.
    #[serde(rename = "w")]
    Vector,
    /// `w⁺`: one vector per layer.
    #[serde(rename = "wplus")]
    VectorPlus,
    /// `W`: one latent matrix shared by all layers.
    #[serde(rename = "W")]
    Matrix,
    /// `W⁺`: one latent matrix per layer.
    #[serde(rename = "Wplus")]
    MatrixPlus,
}

impl Space {
    pub const ALL: [Space; 4] = [Space::Vector, Space::VectorPlus, Space::Matrix, Space::MatrixPlus];

    pub fn is_matrix(self) -> bool {
        matches!(self, Space::Matrix | Space::MatrixPlus)
    }

    pub fn is_layered(self) -> bool {
        matches!(self, Space::VectorPlus | Space::MatrixPlus)
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Space::Vector => "w",
            Space::VectorPlus => "wplus",
            Space::Matrix => "W",
            Space::MatrixPlus => "Wplus",
        })
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(Space::Vector),
            "wplus" | "w+" => Ok(Space::VectorPlus),
            "W" => Ok(Space::Matrix),
            "Wplus" | "W+" => Ok(Space::MatrixPlus),
            other => Err(arg_err(format!("unknown latent space '{other}' (w, wplus, W, Wplus)"))),
        }
    }
}

/// Number of free latent parameters in `space`: `D`, `L·D`, `R·D` or `L·R·D`.
pub fn count_latent_params(config: &GeneratorConfig, space: Space) -> usize {
    let (d, r, l) = (config.latent_dim, config.latent_rows, config.num_layers());
    match space {
        Space::Vector => d,
        Space::VectorPlus => l * d,
        Space::Matrix => r * d,
        Space::MatrixPlus => l * r * d,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StyleSource {
    Vector(Vec<f32>),
    VectorPlus(Vec<Vec<f32>>),
    Matrix(LatentMatrix),
    MatrixPlus(Vec<LatentMatrix>),
}

enum LayerLatent<'a> {
    Vector(&'a [f32]),
    Matrix(&'a LatentMatrix),
}

impl StyleSource {
    pub fn space(&self) -> Space {
        match self {
            StyleSource::Vector(_) => Space::Vector,
            StyleSource::VectorPlus(_) => Space::VectorPlus,
            StyleSource::Matrix(_) => Space::Matrix,
            StyleSource::MatrixPlus(_) => Space::MatrixPlus,
        }
    }

    /// Every vector (or row) set to `mu`.
    pub fn filled(space: Space, config: &GeneratorConfig, mu: &[f32]) -> Self {
        let (r, l) = (config.latent_rows, config.num_layers());
        match space {
            Space::Vector => StyleSource::Vector(mu.to_vec()),
            Space::VectorPlus => StyleSource::VectorPlus(vec![mu.to_vec(); l]),
            Space::Matrix => StyleSource::Matrix(LatentMatrix::repeat(mu, r, LatentSpace::W)),
            Space::MatrixPlus => {
                StyleSource::MatrixPlus(vec![LatentMatrix::repeat(mu, r, LatentSpace::W); l])
            }
        }
    }

    /// Independent `M(z)` for every vector/row, with a fresh `z` each.
    pub fn random(space: Space, g: &Generator, rng: &mut SeededRng) -> Self {
        let cfg = &g.config;
        let d = cfg.latent_dim;
        let count = count_latent_params(cfg, space) / d;
        let z = rng.normal_vec(count * d);
        let (w, _) = g.mapper.forward_rows(&z, count);
        let mut out = Self::filled(space, cfg, &vec![0.0; d]);
        out.set_flat(&w);
        out
    }

    /// Like [`StyleSource::random`], but the rows of each latent matrix are
    /// mapped from one correlated `Z` (the generator's sampling distribution).
    pub fn sample(space: Space, g: &Generator, rng: &mut SeededRng) -> Self {
        let cfg = &g.config;
        let (r, d) = (cfg.latent_rows, cfg.latent_dim);
        let matrix = |rng: &mut SeededRng| {
            let z = sample_correlated_z(rng, r, d);
            let (w, _) = g.mapper.forward_rows(&z.data, r);
            LatentMatrix::new(r, d, w, LatentSpace::W).expect("mapper keeps the row shape")
        };
        match space {
            Space::Vector | Space::VectorPlus => Self::random(space, g, rng),
            Space::Matrix => StyleSource::Matrix(matrix(rng)),
            Space::MatrixPlus => StyleSource::MatrixPlus((0..cfg.num_layers()).map(|_| matrix(rng)).collect()),
        }
    }

    fn layer(&self, l: usize) -> LayerLatent<'_> {
        match self {
            StyleSource::Vector(w) => LayerLatent::Vector(w),
            StyleSource::VectorPlus(ws) => LayerLatent::Vector(&ws[l]),
            StyleSource::Matrix(m) => LayerLatent::Matrix(m),
            StyleSource::MatrixPlus(ms) => LayerLatent::Matrix(&ms[l]),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            StyleSource::Vector(w) => w.len(),
            StyleSource::VectorPlus(ws) => ws.iter().map(Vec::len).sum(),
            StyleSource::Matrix(m) => m.data.len(),
            StyleSource::MatrixPlus(ms) => ms.iter().map(|m| m.data.len()).sum(),
        }
    }

    /// All latent parameters concatenated in layer/row order.
    pub fn flat(&self) -> Vec<f32> {
        match self {
            StyleSource::Vector(w) => w.clone(),
            StyleSource::VectorPlus(ws) => ws.concat(),
            StyleSource::Matrix(m) => m.data.clone(),
            StyleSource::MatrixPlus(ms) => ms.iter().flat_map(|m| m.data.iter().copied()).collect(),
        }
    }

    pub fn set_flat(&mut self, data: &[f32]) {
        assert_eq!(data.len(), self.num_params(), "flat latent length mismatch");
        let mut off = 0;
        let mut take = |dst: &mut [f32]| {
            dst.copy_from_slice(&data[off..off + dst.len()]);
            off += dst.len();
        };
        match self {
            StyleSource::Vector(w) => take(w),
            StyleSource::VectorPlus(ws) => ws.iter_mut().for_each(|w| take(w)),
            StyleSource::Matrix(m) => take(&mut m.data),
            StyleSource::MatrixPlus(ms) => ms.iter_mut().for_each(|m| take(&mut m.data)),
        }
    }

    fn for_each_buffer(&mut self, mut f: impl FnMut(&mut [f32])) {
        match self {
            StyleSource::Vector(w) => f(w),
            StyleSource::VectorPlus(ws) => ws.iter_mut().for_each(|w| f(w)),
            StyleSource::Matrix(m) => f(&mut m.data),
            StyleSource::MatrixPlus(ms) => ms.iter_mut().for_each(|m| f(&mut m.data)),
        }
    }

    /// Contracts every vector/row toward `mu` by `psi`.
    pub fn truncate_in_place(&mut self, mu: &[f32], psi: f32) {
        self.for_each_buffer(|b| truncate_rows_in_place(b, mu, psi));
    }

    /// Largest distance of any vector/row from `mu`.
    pub fn max_deviation(&self, mu: &[f32]) -> f32 {
        self.flat()
            .chunks_exact(mu.len())
            .map(|r| r.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f32>().sqrt())
            .fold(0.0, f32::max)
    }

    /// Element-wise `a + t·(b−a)`; exact at both endpoints and for `a == b`.
    pub fn lerp(a: &StyleSource, b: &StyleSource, t: f32) -> Result<StyleSource> {
        if a.space() != b.space() || a.num_params() != b.num_params() {
            return Err(arg_err(format!(
                "cannot interpolate {} ({} params) with {} ({} params)",
                a.space(),
                a.num_params(),
                b.space(),
                b.num_params()
            )));
        }
        if t == 1.0 {
            return Ok(b.clone());
        }
        let fa = a.flat();
        let fb = b.flat();
        let mut out = a.clone();
        out.set_flat(&fa.iter().zip(&fb).map(|(x, y)| x + t * (y - x)).collect::<Vec<_>>());
        Ok(out)
    }

    /// Per-layer latents in layered form: vector sources become `w⁺`, matrix
    /// sources become `W⁺`.
    pub fn to_layered(&self, num_layers: usize) -> StyleSource {
        match self {
            StyleSource::Vector(w) => StyleSource::VectorPlus(vec![w.clone(); num_layers]),
            StyleSource::Matrix(m) => StyleSource::MatrixPlus(vec![m.clone(); num_layers]),
            other => other.clone(),
        }
    }

    /// Per-layer latent matrices with `rows` rows; vectors are replicated.
    pub fn to_matrix_plus(&self, num_layers: usize, rows: usize) -> StyleSource {
        match self.to_layered(num_layers) {
            StyleSource::VectorPlus(ws) => StyleSource::MatrixPlus(
                ws.iter().map(|w| LatentMatrix::repeat(w, rows, LatentSpace::W)).collect(),
            ),
            other => other,
        }
    }

    /// Tensor layout: `w` → `[D]`, `w⁺` → `[L, D]`, `W` → `[R, D]`, `W⁺` → `[L, R, D]`.
    pub fn to_tensor(&self) -> Tensor {
        let shape = match self {
            StyleSource::Vector(w) => vec![w.len()],
            StyleSource::VectorPlus(ws) => vec![ws.len(), ws.first().map_or(0, Vec::len)],
            StyleSource::Matrix(m) => vec![m.rows, m.dim],
            StyleSource::MatrixPlus(ms) => {
                vec![ms.len(), ms.first().map_or(0, |m| m.rows), ms.first().map_or(0, |m| m.dim)]
            }
        };
        Tensor::new(shape, self.flat()).expect("consistent latent shape")
    }

    pub fn from_tensor(space: Space, t: &Tensor) -> Result<StyleSource> {
        let d = t.data();
        let bad = || shape_err(format!("tensor {:?} is not a valid {space} latent", t.shape()));
        Ok(match (space, t.shape()) {
            (Space::Vector, &[_]) => StyleSource::Vector(d.to_vec()),
            (Space::VectorPlus, &[_, dim]) => {
                StyleSource::VectorPlus(d.chunks_exact(dim.max(1)).map(<[f32]>::to_vec).collect())
            }
            (Space::Matrix, &[r, dim]) => {
                StyleSource::Matrix(LatentMatrix::new(r, dim, d.to_vec(), LatentSpace::W)?)
            }
            (Space::MatrixPlus, &[_, r, dim]) => StyleSource::MatrixPlus(
                d.chunks_exact((r * dim).max(1))
                    .map(|c| LatentMatrix::new(r, dim, c.to_vec(), LatentSpace::W))
                    .collect::<Result<_>>()?,
            ),
            _ => return Err(bad()),
        })
    }
}

/// Styles entering one layer: a shared vector or one row per output channel.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerStyle {
    Vector(Vec<f32>),
    Matrix(StyleMatrix),
}

#[derive(Debug, Clone)]
struct LayerTrace {
    style: LayerStyle,
    theta_prime: Vec<f32>,
    norms: Vec<f32>,
    weight: Vec<f32>,
    cols: Vec<f32>,
    geom: ConvGeom,
    pre: Vec<f32>,
}

/// Intermediate values of one forward pass, consumed by the reverse pass.
#[derive(Debug, Clone)]
pub struct SynthTrace {
    layers: Vec<LayerTrace>,
    final_act: Vec<f32>,
}

/// Parameter gradients, laid out like the generator's parameters.
#[derive(Debug, Clone)]
pub struct GeneratorGrads {
    pub mapper: Vec<Dense>,
    pub projections: Vec<Dense>,
    pub const_input: Vec<f32>,
    pub conv_weights: Vec<Vec<f32>>,
    pub conv_biases: Vec<Vec<f32>>,
    pub rgb_weight: Vec<f32>,
    pub rgb_bias: Vec<f32>,
}

impl GeneratorGrads {
    pub fn zeros(g: &Generator) -> Self {
        Self {
            mapper: g.mapper.zeros_like(),
            projections: g.projections.iter().map(|p| Dense::zeros(p.dense.in_dim, p.dense.out_dim)).collect(),
            const_input: vec![0.0; g.const_input.len()],
            conv_weights: g.conv_weights.iter().map(|t| vec![0.0; t.len()]).collect(),
            conv_biases: g.conv_biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            rgb_weight: vec![0.0; g.rgb_weight.len()],
            rgb_bias: vec![0.0; g.rgb_bias.len()],
        }
    }

    /// Same order as [`Generator::param_buffers_mut`].
    pub fn buffers(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for d in self.mapper.iter().chain(&self.projections) {
            out.extend(d.params().map(Vec::as_slice));
        }
        out.push(&self.const_input);
        out.extend(self.conv_weights.iter().map(Vec::as_slice));
        out.extend(self.conv_biases.iter().map(Vec::as_slice));
        out.push(&self.rgb_weight);
        out.push(&self.rgb_bias);
        out
    }

    pub fn scale(&mut self, k: f32) {
        let scale = |v: &mut Vec<f32>| v.iter_mut().for_each(|x| *x *= k);
        for d in self.mapper.iter_mut().chain(self.projections.iter_mut()) {
            d.params_mut().into_iter().for_each(scale);
        }
        scale(&mut self.const_input);
        self.conv_weights.iter_mut().for_each(scale);
        self.conv_biases.iter_mut().for_each(scale);
        scale(&mut self.rgb_weight);
        scale(&mut self.rgb_bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub mapper: MappingNetwork,
    pub projections: Vec<AffineProjection>,
    /// `const_channels×4×4`.
    pub const_input: Vec<f32>,
    /// `N_O×N_I×k×k` per layer.
    pub conv_weights: Vec<Tensor>,
    pub conv_biases: Vec<Vec<f32>>,
    /// `image_channels×C_last` (1×1 convolution).
    pub rgb_weight: Vec<f32>,
    pub rgb_bias: Vec<f32>,
    /// Cached `E_z[M(z)]`.
    pub mean_w: Vec<f32>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let mapper = MappingNetwork::new(d, config.mapping_layers, rng);
        let projections = config.layers.iter().map(|l| AffineProjection::new(d, l.in_channels, rng)).collect();
        let cr = config.const_resolution;
        let const_input = rng.normal_vec(config.const_channels * cr * cr);
        let conv_weights = config
            .layers
            .iter()
            .map(|l| {
                let shape = vec![l.out_channels, l.in_channels, l.kernel, l.kernel];
                let n = shape.iter().product();
                Tensor::new(shape, rng.normal_vec(n)).expect("shape")
            })
            .collect();
        let conv_biases = config.layers.iter().map(|l| vec![0.0; l.out_channels]).collect();
        let c_last = config.layers.last().map_or(config.const_channels, |l| l.out_channels);
        let rgb_std = 1.0 / (c_last as f32).sqrt();
        let rgb_weight = rng
            .normal_vec(config.image_channels * c_last)
            .into_iter()
            .map(|v| v * rgb_std)
            .collect();
        let rgb_bias = vec![0.0; config.image_channels];
        let mut g = Self {
            config,
            mapper,
            projections,
            const_input,
            conv_weights,
            conv_biases,
            rgb_weight,
            rgb_bias,
            mean_w: Vec::new(),
        };
        g.refresh_mean_w(&mut rng.child(0x6d75), DEFAULT_MEAN_SAMPLES);
        Ok(g)
    }

    pub fn refresh_mean_w(&mut self, rng: &mut SeededRng, n_samples: usize) {
        self.mean_w = self.mapper.mean_w(rng, n_samples);
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers()
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let r = self.config.output_resolution();
        [self.config.image_channels, r, r]
    }

    pub fn validate_source(&self, src: &StyleSource) -> Result<()> {
        let cfg = &self.config;
        let (d, r, l) = (cfg.latent_dim, cfg.latent_rows, cfg.num_layers());
        let check_vec = |w: &Vec<f32>| {
            if w.len() != d {
                return Err(shape_err(format!("latent vector length {} != D {d}", w.len())));
            }
            Ok(())
        };
        let check_mat = |m: &LatentMatrix| {
            if cfg.modulation_mode != ModulationMode::Overparam {
                return Err(arg_err("latent matrices require an overparameterized generator"));
            }
            if m.rows != r || m.dim != d {
                return Err(shape_err(format!("latent matrix {}x{} != {r}x{d}", m.rows, m.dim)));
            }
            Ok(())
        };
        match src {
            StyleSource::Vector(w) => check_vec(w),
            StyleSource::VectorPlus(ws) => {
                if ws.len() != l {
                    return Err(shape_err(format!("w+ has {} layers, generator has {l}", ws.len())));
                }
                ws.iter().try_for_each(check_vec)
            }
            StyleSource::Matrix(m) => check_mat(m),
            StyleSource::MatrixPlus(ms) => {
                if ms.len() != l {
                    return Err(shape_err(format!("W+ has {} layers, generator has {l}", ms.len())));
                }
                ms.iter().try_for_each(check_mat)
            }
        }
    }

    /// Per-layer styles: `A⁽ˡ⁾(w)` for vector sources, `A⁽ˡ⁾` applied to the
    /// first `N_O⁽ˡ⁾` rows for matrix sources.
    pub fn styles(&self, src: &StyleSource) -> Result<Vec<LayerStyle>> {
        self.validate_source(src)?;
        Ok(self
            .config
            .layers
            .iter()
            .enumerate()
            .map(|(l, spec)| {
                let a = &self.projections[l];
                match src.layer(l) {
                    LayerLatent::Vector(w) => LayerStyle::Vector(a.apply(w)),
                    LayerLatent::Matrix(m) => {
                        let n = spec.out_channels;
                        LayerStyle::Matrix(a.apply_rows(&m.data[..n * m.dim], n))
                    }
                }
            })
            .collect())
    }

    pub fn synthesize(&self, src: &StyleSource) -> Result<ImageTensor> {
        Ok(self.forward(src)?.0)
    }

    pub fn forward(&self, src: &StyleSource) -> Result<(ImageTensor, SynthTrace)> {
        let styles = self.styles(src)?;
        Ok(self.forward_styles(styles))
    }

    pub fn forward_styles(&self, styles: Vec<LayerStyle>) -> (ImageTensor, SynthTrace) {
        let cfg = &self.config;
        let mut x = self.const_input.clone();
        let mut layers = Vec::with_capacity(cfg.num_layers());
        for (l, (spec, style)) in cfg.layers.iter().zip(styles).enumerate() {
            let theta = &self.conv_weights[l];
            let theta_prime = match &style {
                LayerStyle::Vector(s) => modulate_baseline(theta, s),
                LayerStyle::Matrix(s) => modulate_overparam(theta, s),
            }
            .expect("style shapes follow the config")
            .weights
            .into_data();
            let norms = channel_norms(&theta_prime, spec.out_channels, DEMOD_EPS);
            let mut weight = theta_prime.clone();
            demodulate_in_place(&mut weight, &norms);
            let geom = ConvGeom::same(spec.in_channels, spec.out_channels, spec.resolution, spec.resolution, spec.kernel);
            let (mut y, cols) = conv_forward(&x, &weight, &geom);
            add_channel_bias(&mut y, &self.conv_biases[l]);
            let pre = y.clone();
            leaky_inplace(&mut y, LEAKY_SLOPE);
            x = if spec.upsample {
                upsample2x(&y, spec.out_channels, spec.resolution, spec.resolution)
            } else {
                y
            };
            layers.push(LayerTrace { style, theta_prime, norms, weight, cols, geom, pre });
        }
        let res = cfg.output_resolution();
        let (mut img, _) = conv_forward(&x, &self.rgb_weight, &self.rgb_geom());
        add_channel_bias(&mut img, &self.rgb_bias);
        let image = ImageTensor::new(cfg.image_channels, res, res, img).expect("output shape");
        (image, SynthTrace { layers, final_act: x })
    }

    fn rgb_geom(&self) -> ConvGeom {
        let c_last = self.config.layers.last().map_or(self.config.const_channels, |l| l.out_channels);
        let res = self.config.output_resolution();
        ConvGeom::same(c_last, self.config.image_channels, res, res, 1)
    }

    /// Reverse pass from an image gradient to per-layer style gradients
    /// (`N_I` for vector styles, `N_O×N_I` for matrix styles).
    pub fn backward_styles(
        &self,
        trace: &SynthTrace,
        grad_img: &[f32],
        mut grads: Option<&mut GeneratorGrads>,
    ) -> Vec<Vec<f32>> {
        let rgb = self.rgb_geom();
        if let Some(g) = grads.as_deref_mut() {
            conv_backward_weight(&trace.final_act, grad_img, &rgb, &mut g.rgb_weight);
            accumulate_channel_sums(grad_img, &mut g.rgb_bias);
        }
        let mut gx = conv_backward_data(grad_img, &self.rgb_weight, &rgb);
        let mut style_grads = vec![Vec::new(); self.num_layers()];
        for (l, spec) in self.config.layers.iter().enumerate().rev() {
            let lt = &trace.layers[l];
            let mut gy = if spec.upsample {
                upsample2x_backward(&gx, spec.out_channels, spec.resolution, spec.resolution)
            } else {
                gx
            };
            leaky_backward(&lt.pre, &mut gy, LEAKY_SLOPE);
            let mut gw = vec![0.0; lt.geom.weight_len()];
            conv_backward_weight(&lt.cols, &gy, &lt.geom, &mut gw);
            gx = conv_backward_data(&gy, &lt.weight, &lt.geom);
            let gprime = demodulate_backward(&lt.theta_prime, &lt.norms, &gw);
            let kk = spec.kernel * spec.kernel;
            let theta = self.conv_weights[l].data();
            let gs = style_grad(theta, &gprime, kk);
            let n_in = spec.in_channels;
            if let Some(g) = grads.as_deref_mut() {
                accumulate_channel_sums(&gy, &mut g.conv_biases[l]);
                let gt = &mut g.conv_weights[l];
                for (pair, (dst, src)) in gt.chunks_exact_mut(kk).zip(gprime.chunks_exact(kk)).enumerate() {
                    let s = match &lt.style {
                        LayerStyle::Vector(s) => s[pair % n_in],
                        LayerStyle::Matrix(m) => m.data[pair],
                    };
                    dst.iter_mut().zip(src).for_each(|(d, v)| *d += v * s);
                }
            }
            style_grads[l] = match lt.style {
                LayerStyle::Vector(_) => {
                    let mut col = vec![0.0; n_in];
                    for row in gs.chunks_exact(n_in) {
                        col.iter_mut().zip(row).for_each(|(c, v)| *c += v);
                    }
                    col
                }
                LayerStyle::Matrix(_) => gs,
            };
        }
        if let Some(g) = grads {
            g.const_input.iter_mut().zip(&gx).for_each(|(c, v)| *c += v);
        }
        style_grads
    }

    /// Chains per-layer style gradients through the affine projections to
    /// a gradient shaped like `src`.
    pub fn latent_grad(
        &self,
        src: &StyleSource,
        style_grads: &[Vec<f32>],
        mut grads: Option<&mut GeneratorGrads>,
    ) -> StyleSource {
        let mut out = src.clone();
        out.set_flat(&vec![0.0; src.num_params()]);
        for (l, spec) in self.config.layers.iter().enumerate() {
            let a = &self.projections[l].dense;
            let pg = grads.as_deref_mut().map(|g| &mut g.projections[l]);
            match (src.layer(l), &mut out) {
                (LayerLatent::Vector(w), StyleSource::Vector(gw)) => {
                    let d = a.backward_rows(w, &style_grads[l], 1, pg);
                    gw.iter_mut().zip(&d).for_each(|(x, v)| *x += v);
                }
                (LayerLatent::Vector(w), StyleSource::VectorPlus(gws)) => {
                    gws[l] = a.backward_rows(w, &style_grads[l], 1, pg);
                }
                (LayerLatent::Matrix(m), StyleSource::Matrix(gm)) => {
                    let n = spec.out_channels * m.dim;
                    let d = a.backward_rows(&m.data[..n], &style_grads[l], spec.out_channels, pg);
                    gm.data[..n].iter_mut().zip(&d).for_each(|(x, v)| *x += v);
                }
                (LayerLatent::Matrix(m), StyleSource::MatrixPlus(gms)) => {
                    let n = spec.out_channels * m.dim;
                    let d = a.backward_rows(&m.data[..n], &style_grads[l], spec.out_channels, pg);
                    gms[l].data[..n].copy_from_slice(&d);
                }
                _ => unreachable!("gradient mirrors the source variant"),
            }
        }
        out
    }

    /// Full reverse pass from an image gradient to a latent gradient.
    pub fn backward(
        &self,
        src: &StyleSource,
        trace: &SynthTrace,
        grad_img: &[f32],
        mut grads: Option<&mut GeneratorGrads>,
    ) -> StyleSource {
        let sg = self.backward_styles(trace, grad_img, grads.as_deref_mut());
        self.latent_grad(src, &sg, grads)
    }

    /// Same order as [`GeneratorGrads::buffers`].
    pub fn param_buffers_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for d in self.mapper.layers.iter_mut() {
            out.extend(d.params_mut().map(Vec::as_mut_slice));
        }
        for p in self.projections.iter_mut() {
            out.extend(p.dense.params_mut().map(Vec::as_mut_slice));
        }
        out.push(&mut self.const_input);
        out.extend(self.conv_weights.iter_mut().map(Tensor::data_mut));
        out.extend(self.conv_biases.iter_mut().map(Vec::as_mut_slice));
        out.push(&mut self.rgb_weight);
        out.push(&mut self.rgb_bias);
        out
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let v = |data: &[f32]| Tensor::new(vec![data.len()], data.to_vec()).expect("vector");
        let dense = |d: &Dense| {
            (Tensor::new(vec![d.out_dim, d.in_dim], d.weight.clone()).expect("dense"), v(&d.bias))
        };
        let mut out = Vec::new();
        for (l, d) in self.mapper.layers.iter().enumerate() {
            let (w, b) = dense(d);
            out.push((format!("mapper.{l}.weight"), w));
            out.push((format!("mapper.{l}.bias"), b));
        }
        for (l, p) in self.projections.iter().enumerate() {
            let (w, b) = dense(&p.dense);
            out.push((format!("affine.{l}.weight"), w));
            out.push((format!("affine.{l}.bias"), b));
        }
        let cr = self.config.const_resolution;
        out.push((
            "const".into(),
            Tensor::new(vec![self.config.const_channels, cr, cr], self.const_input.clone()).expect("const"),
        ));
        for (l, (w, b)) in self.conv_weights.iter().zip(&self.conv_biases).enumerate() {
            out.push((format!("conv.{l}.weight"), w.clone()));
            out.push((format!("conv.{l}.bias"), v(b)));
        }
        let c_last = self.rgb_weight.len() / self.config.image_channels;
        out.push((
            "rgb.weight".into(),
            Tensor::new(vec![self.config.image_channels, c_last], self.rgb_weight.clone()).expect("rgb"),
        ));
        out.push(("rgb.bias".into(), v(&self.rgb_bias)));
        out.push(("mean_w".into(), v(&self.mean_w)));
        out
    }

    /// Writes `metadata.json` plus one `<name>.opt` tensor file per parameter.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let tensors = self.named_tensors();
        for (name, t) in &tensors {
            save_tensor(t, dir.join(format!("{name}.opt")))?;
        }
        let meta = CheckpointMetadata {
            format: CHECKPOINT_FORMAT.into(),
            modulation_mode: self.config.modulation_mode,
            config: self.config.clone(),
            mapper_slope: self.mapper.slope,
            mapper_normalize: self.mapper.normalize,
            mean_w: self.mean_w.clone(),
            tensors: tensors.into_iter().map(|(n, _)| n).collect(),
        };
        std::fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: CheckpointMetadata = serde_json::from_slice(&std::fs::read(dir.join("metadata.json"))?)?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format '{}'", meta.format)));
        }
        let mut config = meta.config;
        config.modulation_mode = meta.modulation_mode;
        config.validate()?;
        let read = |name: &str| load_tensor(dir.join(format!("{name}.opt")));
        let read_dense = |prefix: &str| -> Result<Dense> {
            let w = read(&format!("{prefix}.weight"))?;
            let b = read(&format!("{prefix}.bias"))?;
            let (out_dim, in_dim) = match *w.shape() {
                [o, i] => (o, i),
                _ => return Err(shape_err(format!("{prefix}.weight must be rank 2"))),
            };
            if b.len() != out_dim {
                return Err(shape_err(format!("{prefix}.bias length {} != {out_dim}", b.len())));
            }
            Ok(Dense { in_dim, out_dim, weight: w.into_data(), bias: b.into_data() })
        };
        let d = config.latent_dim;
        let mapper = MappingNetwork {
            dim: d,
            layers: (0..config.mapping_layers)
                .map(|l| read_dense(&format!("mapper.{l}")))
                .collect::<Result<_>>()?,
            slope: meta.mapper_slope,
            normalize: meta.mapper_normalize,
        };
        let projections = (0..config.num_layers())
            .map(|l| read_dense(&format!("affine.{l}")).map(|dense| AffineProjection { dense }))
            .collect::<Result<Vec<_>>>()?;
        let mut conv_weights = Vec::new();
        let mut conv_biases = Vec::new();
        for (l, spec) in config.layers.iter().enumerate() {
            let w = read(&format!("conv.{l}.weight"))?;
            if w.shape() != [spec.out_channels, spec.in_channels, spec.kernel, spec.kernel] {
                return Err(shape_err(format!("conv.{l}.weight has shape {:?}", w.shape())));
            }
            conv_weights.push(w);
            conv_biases.push(read(&format!("conv.{l}.bias"))?.into_data());
        }
        let g = Self {
            mapper,
            projections,
            const_input: read("const")?.into_data(),
            conv_weights,
            conv_biases,
            rgb_weight: read("rgb.weight")?.into_data(),
            rgb_bias: read("rgb.bias")?.into_data(),
            mean_w: meta.mean_w,
            config,
        };
        g.check_shapes()?;
        Ok(g)
    }

    fn check_shapes(&self) -> Result<()> {
        let cfg = &self.config;
        let cr = cfg.const_resolution;
        let c_last = cfg.layers.last().map_or(cfg.const_channels, |l| l.out_channels);
        let ok = self.mapper.layers.iter().all(|l| l.in_dim == cfg.latent_dim && l.out_dim == cfg.latent_dim)
            && self
                .projections
                .iter()
                .zip(&cfg.layers)
                .all(|(p, s)| p.dense.in_dim == cfg.latent_dim && p.dense.out_dim == s.in_channels)
            && self.const_input.len() == cfg.const_channels * cr * cr
            && self.conv_biases.iter().zip(&cfg.layers).all(|(b, s)| b.len() == s.out_channels)
            && self.rgb_weight.len() == cfg.image_channels * c_last
            && self.rgb_bias.len() == cfg.image_channels
            && self.mean_w.len() == cfg.latent_dim;
        if ok {
            Ok(())
        } else {
            Err(shape_err("checkpoint tensors inconsistent with config"))
        }
    }

    /// 64-bit FNV-1a over every parameter's little-endian bytes, in checkpoint order.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.named_tensors() {
            for v in t.data() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

pub const CHECKPOINT_FORMAT: &str = "overparam-checkpoint-v1";

/// Contents of `metadata.json` in a checkpoint directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub format: String,
    pub modulation_mode: ModulationMode,
    pub config: GeneratorConfig,
    pub mapper_slope: f32,
    pub mapper_normalize: bool,
    pub mean_w: Vec<f32>,
    pub tensors: Vec<String>,
}

/// `L(S(src))` and its gradient w.r.t. the latent parameters of `src`.
pub fn loss_and_grad(g: &Generator, src: &StyleSource, loss: &dyn ImageLoss) -> Result<(f32, StyleSource)> {
    let (img, trace) = g.forward(src)?;
    let (value, grad_img) = loss.evaluate(&img)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss is {value}")));
    }
    Ok((value, g.backward(src, &trace, &grad_img, None)))
}
