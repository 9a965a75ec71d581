mod common;

use common::{random_source, reference, small_generator};
use overparam::loss::PixelL2;
use overparam::synthesis::{count_latent_params, loss_and_grad, GeneratorGrads};
use overparam::{Generator, GeneratorConfig, ImageTensor, LatentMatrix, LatentSpace, ModulationMode, SeededRng, Space, StyleSource};

const SPACES: [Space; 4] = [Space::Vector, Space::VectorPlus, Space::Matrix, Space::MatrixPlus];

fn random_target(g: &Generator, rng: &mut SeededRng) -> ImageTensor {
    let [c, h, w] = g.output_shape();
    ImageTensor::new(c, h, w, rng.normal_vec(c * h * w).into_iter().map(|v| 0.5 * v).collect()).unwrap()
}

#[test]
fn forward_matches_reference_in_every_space() {
    let g = small_generator(11, 6, &[8, 6, 4]);
    let mut rng = SeededRng::new(12);
    for space in SPACES {
        for _ in 0..3 {
            let src = random_source(&g, space, &mut rng);
            let want = reference::synthesize(&g, &reference::latents_of(&g, &src));
            let got = g.synthesize(&src).unwrap();
            let worst = got.data.iter().zip(&want).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-4, "{space}: {worst}");
        }
    }
}

#[test]
fn latent_gradients_match_finite_differences() {
    let g = small_generator(21, 6, &[8, 6, 4]);
    let mut rng = SeededRng::new(22);
    let h = 1e-3;
    for space in SPACES {
        let src = random_source(&g, space, &mut rng);
        let target = random_target(&g, &mut rng);
        let (_, grad) = loss_and_grad(&g, &src, &PixelL2::new(target.clone())).unwrap();
        let analytic = grad.flat();
        let base = src.flat();
        let (_, pattern) = reference::synthesize_with_pattern(&g, &reference::latents_of(&g, &src));
        let eval = |params: &[f32]| {
            let mut s = src.clone();
            s.set_flat(params);
            let (img, p) = reference::synthesize_with_pattern(&g, &reference::latents_of(&g, &s));
            (reference::mse(&img, &target.data), p)
        };
        let mut checked = 0;
        for _ in 0..200 {
            if checked == 20 {
                break;
            }
            let i = rng.range(0, base.len());
            let (mut plus, mut minus) = (base.clone(), base.clone());
            plus[i] += h;
            minus[i] -= h;
            let ((lp, pp), (lm, pm)) = (eval(&plus), eval(&minus));
            if pp != pattern || pm != pattern {
                continue;
            }
            let fd = (lp - lm) / (plus[i] as f64 - minus[i] as f64);
            let an = analytic[i] as f64;
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            assert!(rel < 1e-3, "{space} coordinate {i}: fd {fd} analytic {an}");
            checked += 1;
        }
        assert_eq!(checked, 20, "{space}: too many kink crossings");
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut g = small_generator(31, 6, &[8, 6, 4]);
    let mut rng = SeededRng::new(32);
    let src = random_source(&g, Space::Matrix, &mut rng);
    let target = random_target(&g, &mut rng);
    let (img, trace) = g.forward(&src).unwrap();
    let (_, grad_img) = overparam::loss::ImageLoss::evaluate(&PixelL2::new(target.clone()), &img).unwrap();
    let mut grads = GeneratorGrads::zeros(&g);
    g.backward(&src, &trace, &grad_img, Some(&mut grads));
    let analytic: Vec<Vec<f32>> = grads.buffers().into_iter().map(<[f32]>::to_vec).collect();
    let latents = reference::latents_of(&g, &src);
    let (_, pattern) = reference::synthesize_with_pattern(&g, &latents);
    // mapper parameters do not touch synthesis from a W-space source
    let first = 2 * g.mapper.layers.len();
    let h = 1e-3f32;
    for b in first..analytic.len() {
        let mut checked = 0;
        for _ in 0..40 {
            if checked == 4 {
                break;
            }
            let i = rng.range(0, analytic[b].len());
            let orig = g.param_buffers_mut()[b][i];
            let mut at = |v: f32| {
                g.param_buffers_mut()[b][i] = v;
                let (img, p) = reference::synthesize_with_pattern(&g, &latents);
                (reference::mse(&img, &target.data), p)
            };
            let ((lp, pp), (lm, pm)) = (at(orig + h), at(orig - h));
            at(orig);
            if pp != pattern || pm != pattern {
                continue;
            }
            let fd = (lp - lm) / ((orig + h) as f64 - (orig - h) as f64);
            let an = analytic[b][i] as f64;
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            assert!(rel < 1e-3, "buffer {b} index {i}: fd {fd} analytic {an}");
            checked += 1;
        }
        assert!(checked > 0, "buffer {b}: no usable coordinate");
    }
}

#[test]
fn equal_row_gradient_sums_to_vector_gradient() {
    let g = small_generator(41, 6, &[8, 6, 4]);
    let mut rng = SeededRng::new(42);
    let rows = g.config.latent_rows;
    let loss = PixelL2::new(random_target(&g, &mut rng));
    for _ in 0..5 {
        let w = common::random_vector(&g, &mut rng);
        let (lv, gv) = loss_and_grad(&g, &StyleSource::Vector(w.clone()), &loss).unwrap();
        let matrix = StyleSource::Matrix(LatentMatrix::repeat(&w, rows, LatentSpace::W));
        let (lm, gm) = loss_and_grad(&g, &matrix, &loss).unwrap();
        assert!((lv - lm).abs() <= 1e-6 * lv.abs().max(1.0));
        let (StyleSource::Vector(gv), StyleSource::Matrix(gm)) = (gv, gm) else { unreachable!() };
        for (k, want) in gv.iter().enumerate() {
            let sum: f32 = (0..rows).map(|r| gm.row(r)[k]).sum();
            assert!((sum - want).abs() <= 1e-4 * want.abs().max(1.0), "coordinate {k}: {sum} vs {want}");
        }
    }
}

#[test]
fn own_output_is_a_stationary_point() {
    let g = small_generator(51, 6, &[8, 6, 4]);
    let mut rng = SeededRng::new(52);
    for space in SPACES {
        let src = random_source(&g, space, &mut rng);
        let (value, grad) = loss_and_grad(&g, &src, &PixelL2::new(g.synthesize(&src).unwrap())).unwrap();
        assert_eq!(value, 0.0);
        let norm = grad.flat().iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!(norm < 1e-6, "{space}: {norm}");
    }
}

#[test]
fn desk_latent_parameter_counts() {
    let cfg = GeneratorConfig::desk(ModulationMode::Overparam);
    assert_eq!(count_latent_params(&cfg, Space::Vector), 64);
    assert_eq!(count_latent_params(&cfg, Space::VectorPlus), 256);
    assert_eq!(count_latent_params(&cfg, Space::Matrix), 4096);
    assert_eq!(count_latent_params(&cfg, Space::MatrixPlus), 4 * 4096);
    let g = Generator::new(cfg, &mut SeededRng::new(0)).unwrap();
    let img = g.synthesize(&StyleSource::sample(Space::Matrix, &g, &mut SeededRng::new(1))).unwrap();
    assert_eq!(img.shape(), [3, 32, 32]);
    assert!(img.is_finite());
}
