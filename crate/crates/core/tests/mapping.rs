mod common;

use common::reference;
use overparam::latent::{estimate_mean_w, sample_correlated_z, LatentMatrix, LatentSpace};
use overparam::mapper::{map_matrix, AffineProjection, MappingNetwork};
use overparam::SeededRng;
use proptest::prelude::*;

#[test]
fn jacobian_matches_finite_differences() {
    let d = 8;
    let h = 1e-3;
    for seed in 0..5 {
        let mut rng = SeededRng::new(seed);
        let m = MappingNetwork::new(d, 2, &mut rng);
        let z = rng.normal_vec(d);
        let z64: Vec<f64> = z.iter().map(|&v| v as f64).collect();
        let (_, pattern) = reference::map_latent(&m, &z64);
        let (_, trace) = m.forward_rows(&z, 1);
        for out in 0..d {
            let mut e = vec![0.0; d];
            e[out] = 1.0;
            let row = m.backward_rows(&trace, &e, None);
            for i in 0..d {
                let shifted = |delta: f64| {
                    let mut p = z64.clone();
                    p[i] += delta;
                    reference::map_latent(&m, &p)
                };
                let ((yp, pp), (ym, pm)) = (shifted(h), shifted(-h));
                if pp != pattern || pm != pattern {
                    continue;
                }
                let fd = (yp[out] - ym[out]) / (2.0 * h);
                let an = row[i] as f64;
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(rel < 1e-4, "seed {seed} ∂w{out}/∂z{i}: {fd} vs {an}");
            }
        }
    }
}

#[test]
fn batched_rows_match_loop() {
    let (d, r) = (8, 16);
    let mut rng = SeededRng::new(3);
    let m = MappingNetwork::new(d, 2, &mut rng);
    let projections: Vec<AffineProjection> = (0..3).map(|_| AffineProjection::new(d, 5, &mut rng)).collect();
    let z = sample_correlated_z(&mut rng, r, d);
    let styles = map_matrix(&m, &projections, &z).unwrap();
    for (a, s) in projections.iter().zip(&styles) {
        for row in 0..r {
            let want = a.apply(&m.map_latent(z.row(row)));
            for (x, y) in s.row(row).iter().zip(&want) {
                assert!((x - y).abs() <= 1e-5, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn duplicated_rows_stay_duplicated() {
    let d = 6;
    let mut rng = SeededRng::new(4);
    let m = MappingNetwork::new(d, 2, &mut rng);
    let a = AffineProjection::new(d, 4, &mut rng);
    let v = rng.normal_vec(d);
    let z = LatentMatrix::repeat(&v, 5, LatentSpace::Z);
    let s = &map_matrix(&m, &[a], &z).unwrap()[0];
    for row in 1..5 {
        assert_eq!(s.row(row), s.row(0));
    }
}

#[test]
fn mean_estimate_of_identity_mapper_is_near_zero() {
    let m = MappingNetwork::identity(8, 2);
    let mu = estimate_mean_w(|z| m.map_latent(z), 8, &mut SeededRng::new(5), 10_000).unwrap();
    assert!(mu.iter().all(|v| v.abs() < 0.05), "{mu:?}");
}

#[test]
fn mean_estimate_error_shrinks_with_root_n() {
    const TRIALS: u64 = 30;
    const DIM: usize = 16;
    let m = MappingNetwork::identity(DIM, 1);
    let spread = |n: usize| -> f64 {
        let mut sq = 0.0f64;
        for t in 0..TRIALS {
            let mu = estimate_mean_w(|z| m.map_latent(z), DIM, &mut SeededRng::new(1000 * n as u64 + t), n).unwrap();
            sq += mu.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        }
        (sq / (TRIALS as f64 * DIM as f64)).sqrt()
    };
    let ratio = spread(2000) / spread(1000);
    assert!((0.6..=0.85).contains(&ratio), "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn map_rows_matches_per_row(rows in 1usize..12, seed in any::<u64>()) {
        let d = 8;
        let mut rng = SeededRng::new(seed);
        let m = MappingNetwork::new(d, 2, &mut rng);
        let z = LatentMatrix::new(rows, d, rng.normal_vec(rows * d), LatentSpace::Z).unwrap();
        let w = m.map_rows(&z).unwrap();
        prop_assert_eq!(w.space, LatentSpace::W);
        for r in 0..rows {
            let single = m.map_latent(z.row(r));
            prop_assert!(w.row(r).iter().zip(&single).all(|(a, b)| (a - b).abs() <= 1e-5));
        }
    }
}
