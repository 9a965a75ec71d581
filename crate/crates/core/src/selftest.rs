//! Fast invariant checks run by the `selftest` subcommand.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{GeneratorConfig, ModulationMode};
use crate::editing::compute_pca;
use crate::error::Result;
use crate::inversion::{invert_with_loss, InversionConfig};
use crate::latent::{sample_correlated_z, LatentMatrix, LatentSpace};
use crate::loss::PixelL2;
use crate::modulation::{modulate_baseline, modulate_overparam, StyleMatrix};
use crate::perception::{frechet_distance, FeatureExtractor, GaussianStats};
use crate::rng::SeededRng;
use crate::synthesis::{count_latent_params, loss_and_grad, Generator, Space, StyleSource};
use crate::tensor::{ImageTensor, Tensor};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f32,
}

type Check = fn() -> Result<(bool, String)>;

const CHECKS: [(&str, Check); 10] = [
    ("tensor_round_trip", tensor_round_trip),
    ("modulation_degeneracy", modulation_degeneracy),
    ("correlated_sampling", correlated_sampling),
    ("degeneracy_lattice", degeneracy_lattice),
    ("latent_gradient", latent_gradient),
    ("truncation_schedule", truncation_schedule),
    ("checkpoint_round_trip", checkpoint_round_trip),
    ("pca_orthonormal", pca_orthonormal),
    ("metric_sanity", metric_sanity),
    ("latent_param_count", latent_param_count),
];

pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(name, check)| {
            let t = Instant::now();
            let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckResult { name, passed, detail, seconds: t.elapsed().as_secs_f32() }
        })
        .collect()
}

fn small_generator(mode: ModulationMode) -> Result<Generator> {
    Generator::new(GeneratorConfig::pyramid(8, 8, &[8, 8, 4], mode), &mut SeededRng::new(11))
}

fn tensor_round_trip() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(1);
    let t = Tensor::new(vec![3, 4, 5], rng.normal_vec(60))?;
    let mut buf = Vec::new();
    t.write_to(&mut buf)?;
    let back = Tensor::read_from(buf.as_slice())?;
    let same = back.shape() == t.shape() && back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((same, format!("{} bytes", buf.len())))
}

fn modulation_degeneracy() -> Result<(bool, String)> {
    let mut rng = SeededRng::new(2);
    for _ in 0..50 {
        let (o, i, k) = (rng.range(1, 17), rng.range(1, 17), [1, 3][rng.range(0, 2)]);
        let theta = Tensor::new(vec![o, i, k, k], rng.normal_vec(o * i * k * k))?;
        let s = rng.normal_vec(i);
        let a = modulate_baseline(&theta, &s)?.weights;
        let b = modulate_overparam(&theta, &StyleMatrix::replicate(&s, o))?.weights;
        if a.data().iter().zip(b.data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Ok((false, format!("mismatch at shape {o}x{i}x{k}x{k}")));
        }
    }
    Ok((true, "50 shapes bit-identical".into()))
}

fn correlated_sampling() -> Result<(bool, String)> {
    let (n, d) = (20_000, 8);
    let mut rng = SeededRng::new(3);
    let (mut var, mut cov) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let z = sample_correlated_z(&mut rng, 2, d);
        for j in 0..d {
            var += (z.row(0)[j] as f64).powi(2);
            cov += z.row(0)[j] as f64 * z.row(1)[j] as f64;
        }
    }
    let var = var / (n * d) as f64;
    let cov = cov / (n * d) as f64;
    Ok(((var - 1.0).abs() < 0.03 && (cov - 0.5).abs() < 0.03, format!("var {var:.4} cov {cov:.4}")))
}

fn degeneracy_lattice() -> Result<(bool, String)> {
    let g = small_generator(ModulationMode::Overparam)?;
    let (r, l) = (g.config.latent_rows, g.num_layers());
    let mut rng = SeededRng::new(4);
    let mut worst = 0.0f32;
    for _ in 0..10 {
        let w = g.mapper.map_latent(&rng.normal_vec(g.config.latent_dim));
        let base = g.synthesize(&StyleSource::Vector(w.clone()))?;
        let rows = g.synthesize(&StyleSource::Matrix(LatentMatrix::repeat(&w, r, LatentSpace::W)))?;
        worst = worst.max(base.max_abs_diff(&rows));
        let m = StyleSource::sample(Space::Matrix, &g, &mut rng);
        let plus = m.to_matrix_plus(l, r);
        worst = worst.max(g.synthesize(&m)?.max_abs_diff(&g.synthesize(&plus)?));
    }
    Ok((worst <= 1e-5, format!("max deviation {worst:.2e}")))
}

/// Directional derivatives of a pixel loss along random unit directions.
fn latent_gradient() -> Result<(bool, String)> {
    let g = small_generator(ModulationMode::Overparam)?;
    let mut rng = SeededRng::new(5);
    let target = g.synthesize(&StyleSource::sample(Space::Matrix, &g, &mut rng))?;
    let loss = PixelL2 { target };
    let src = StyleSource::sample(Space::Matrix, &g, &mut rng);
    let (_, grad) = loss_and_grad(&g, &src, &loss)?;
    let grad = grad.flat();
    let x0 = src.flat();
    let h = 1e-2f64;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let dir = rng.normal_vec(x0.len());
        let norm = dir.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        let analytic: f64 = dir.iter().zip(&grad).map(|(u, g)| *u as f64 * *g as f64).sum::<f64>() / norm;
        let eval = |sign: f64| -> Result<f64> {
            let mut s = src.clone();
            let x: Vec<f32> = x0.iter().zip(&dir).map(|(x, u)| (*x as f64 + sign * h * *u as f64 / norm) as f32).collect();
            s.set_flat(&x);
            Ok(loss_and_grad(&g, &s, &loss)?.0 as f64)
        };
        let fd = (eval(1.0)? - eval(-1.0)?) / (2.0 * h);
        worst = worst.max((fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-6));
    }
    Ok((worst < 5e-2, format!("worst relative error {worst:.2e}")))
}

fn truncation_schedule() -> Result<(bool, String)> {
    let g = small_generator(ModulationMode::Overparam)?;
    let target = ImageTensor::filled(3, 8, 8, 0.1);
    let loss = PixelL2 { target };
    let mut ok = true;
    let mut detail = String::new();
    for (cfg, expect) in [
        (InversionConfig { steps: 10, ..InversionConfig::for_space(Space::Matrix) }, 5),
        (InversionConfig { steps: 10, ..InversionConfig::pulse(Space::Matrix) }, 10),
    ] {
        let mut applied = Vec::new();
        let mut obs = |s: &crate::inversion::StepInfo| applied.push(s.truncation_applied);
        invert_with_loss(&g, &loss, &cfg, &mut SeededRng::new(0), Some(&mut obs))?;
        let first_off = applied.iter().position(|a| !a).unwrap_or(applied.len());
        ok &= first_off == expect && applied[first_off..].iter().all(|a| !a);
        detail.push_str(&format!("active {first_off}/{} ", applied.len()));
    }
    Ok((ok, detail.trim_end().into()))
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let g = small_generator(ModulationMode::Overparam)?;
    let dir = std::env::temp_dir().join(format!("overparam-selftest-{}", std::process::id()));
    g.save(&dir)?;
    let back = Generator::load(&dir);
    let _ = std::fs::remove_dir_all(&dir);
    let back = back?;
    Ok((back == g, format!("fingerprint {:016x}", g.fingerprint())))
}

fn pca_orthonormal() -> Result<(bool, String)> {
    let g = small_generator(ModulationMode::Overparam)?;
    let basis = compute_pca(&g, &mut SeededRng::new(6), 500)?;
    let mut worst = 0.0f32;
    for (i, a) in basis.components.iter().enumerate() {
        for (j, b) in basis.components.iter().enumerate() {
            let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    Ok((worst <= 1e-5, format!("max |VᵀV − I| {worst:.2e}")))
}

fn metric_sanity() -> Result<(bool, String)> {
    let n = 6;
    let mean = DVector::from_element(n, 0.3);
    let p = GaussianStats { mean: mean.clone(), cov: DMatrix::identity(n, n) * 4.0 };
    let q = GaussianStats { mean, cov: DMatrix::identity(n, n) };
    let self_d = frechet_distance(&p, &p)?;
    let closed = frechet_distance(&p, &q)?;
    let fx = FeatureExtractor::default();
    let mut rng = SeededRng::new(7);
    let a = ImageTensor::new(3, 16, 16, rng.normal_vec(768))?;
    let b = ImageTensor::new(3, 16, 16, rng.normal_vec(768))?;
    let dab = fx.perceptual_distance(&a, &b)?;
    let dba = fx.perceptual_distance(&b, &a)?;
    let daa = fx.perceptual_distance(&a, &a)?;
    let ok = self_d.abs() < 1e-6 && (closed - n as f64).abs() < 1e-4 && daa == 0.0 && dab == dba && dab > 0.0;
    Ok((ok, format!("self {self_d:.1e} closed-form {closed:.5} d(a,b) {dab:.4}")))
}

fn latent_param_count() -> Result<(bool, String)> {
    let full = GeneratorConfig::full_scale();
    let w = count_latent_params(&full, Space::Vector);
    let m = count_latent_params(&full, Space::Matrix);
    let l = full.num_layers();
    let plus = count_latent_params(&full, Space::VectorPlus);
    Ok((m == 512 * 512 && w == 512 && plus == l * 512, format!("w {w} w+ {plus} W {m}")))
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for r in super::run_all() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
