//! Straight-loop `f64` re-implementation of the synthesis network, used as
//! an independent oracle for forward values and finite differences.

use overparam::{Generator, StyleSource};

const SLOPE: f64 = 0.2;

fn affine(g: &Generator, l: usize, w: &[f64]) -> Vec<f64> {
    let d = &g.projections[l].dense;
    (0..d.out_dim)
        .map(|o| d.bias[o] as f64 + (0..d.in_dim).map(|i| d.weight[o * d.in_dim + i] as f64 * w[i]).sum::<f64>())
        .collect()
}

/// Per-layer `N_O×N_I` style matrices (vector styles replicated).
pub fn styles(g: &Generator, latents: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    g.config
        .layers
        .iter()
        .enumerate()
        .map(|(l, spec)| {
            let rows = &latents[l];
            (0..spec.out_channels)
                .map(|o| affine(g, l, if rows.len() == 1 { &rows[0] } else { &rows[o] }))
                .collect()
        })
        .collect()
}

/// Per-layer latent rows in `f64` (one row for vector sources).
pub fn latents_of(g: &Generator, src: &StyleSource) -> Vec<Vec<Vec<f64>>> {
    let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let l = g.num_layers();
    match src {
        StyleSource::Vector(w) => vec![vec![to64(w)]; l],
        StyleSource::VectorPlus(ws) => ws.iter().map(|w| vec![to64(w)]).collect(),
        StyleSource::Matrix(m) => vec![(0..m.rows).map(|i| to64(m.row(i))).collect(); l],
        StyleSource::MatrixPlus(ms) => ms.iter().map(|m| (0..m.rows).map(|i| to64(m.row(i))).collect()).collect(),
    }
}

pub fn synthesize(g: &Generator, latents: &[Vec<Vec<f64>>]) -> Vec<f64> {
    synthesize_with_pattern(g, latents).0
}

/// Image plus the sign pattern of every rectifier input; central
/// differences are only meaningful when the pattern is constant over the
/// stencil.
pub fn synthesize_with_pattern(g: &Generator, latents: &[Vec<Vec<f64>>]) -> (Vec<f64>, Vec<bool>) {
    let mut pattern = Vec::new();
    let styles = styles(g, latents);
    let mut x: Vec<f64> = g.const_input.iter().map(|&v| v as f64).collect();
    for (l, spec) in g.config.layers.iter().enumerate() {
        let (ci, co, k, r) = (spec.in_channels, spec.out_channels, spec.kernel, spec.resolution);
        let theta = g.conv_weights[l].data();
        let mut wt = vec![0.0f64; co * ci * k * k];
        for o in 0..co {
            let mut ss = 0.0;
            for i in 0..ci {
                for t in 0..k * k {
                    let v = theta[(o * ci + i) * k * k + t] as f64 * styles[l][o][i];
                    wt[(o * ci + i) * k * k + t] = v;
                    ss += v * v;
                }
            }
            let n = (ss + 1e-8).sqrt();
            wt[o * ci * k * k..(o + 1) * ci * k * k].iter_mut().for_each(|v| *v /= n);
        }
        let pad = (k / 2) as isize;
        let mut y = vec![0.0f64; co * r * r];
        for o in 0..co {
            for py in 0..r {
                for px in 0..r {
                    let mut acc = g.conv_biases[l][o] as f64;
                    for i in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = py as isize + ky as isize - pad;
                                let ix = px as isize + kx as isize - pad;
                                if iy < 0 || ix < 0 || iy >= r as isize || ix >= r as isize {
                                    continue;
                                }
                                acc += x[i * r * r + iy as usize * r + ix as usize] * wt[((o * ci + i) * k + ky) * k + kx];
                            }
                        }
                    }
                    pattern.push(acc >= 0.0);
                    y[o * r * r + py * r + px] = if acc >= 0.0 { acc } else { SLOPE * acc };
                }
            }
        }
        x = if spec.upsample {
            let r2 = 2 * r;
            let mut u = vec![0.0; co * r2 * r2];
            for c in 0..co {
                for py in 0..r2 {
                    for px in 0..r2 {
                        u[c * r2 * r2 + py * r2 + px] = y[c * r * r + (py / 2) * r + px / 2];
                    }
                }
            }
            u
        } else {
            y
        };
    }
    let res = g.config.output_resolution();
    let hw = res * res;
    let c_last = g.rgb_weight.len() / g.config.image_channels;
    let mut img = vec![0.0; g.config.image_channels * hw];
    for o in 0..g.config.image_channels {
        for p in 0..hw {
            let mut acc = g.rgb_bias[o] as f64;
            for c in 0..c_last {
                acc += g.rgb_weight[o * c_last + c] as f64 * x[c * hw + p];
            }
            img[o * hw + p] = acc;
        }
    }
    (img, pattern)
}

pub fn mse(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| (x - y as f64).powi(2)).sum::<f64>() / a.len() as f64
}

/// `f64` mapping network: optional RMS normalization, then dense + leaky layers.
/// Returns the output and the sign pattern of every rectifier input.
pub fn map_latent(m: &overparam::mapper::MappingNetwork, z: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut x = z.to_vec();
    if m.normalize {
        let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let r = 1.0 / (ms + 1e-8).sqrt();
        x.iter_mut().for_each(|v| *v *= r);
    }
    let mut pattern = Vec::new();
    for d in &m.layers {
        x = (0..d.out_dim)
            .map(|o| {
                let a = d.bias[o] as f64 + (0..d.in_dim).map(|i| d.weight[o * d.in_dim + i] as f64 * x[i]).sum::<f64>();
                pattern.push(a >= 0.0);
                if a >= 0.0 {
                    a
                } else {
                    m.slope as f64 * a
                }
            })
            .collect();
    }
    (x, pattern)
}
