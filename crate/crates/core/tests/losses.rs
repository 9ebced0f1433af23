mod common;

use common::*;
use essgan::autodiff::{Tape, Tensor};
use essgan::losses::{
    d_loss, es_loss, g_adv_loss, grad_loss, l1_loss, l2_loss, ms_ssim, ms_ssim_loss, ms_ssim_value, optimal_d_check,
    ssim, ssim_value, MsSsimParams, SsimParams,
};
use essgan::Image;
use proptest::prelude::*;
use rand::Rng;

fn random_pair(n: usize, seed: u64, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n * n).map(|_| r.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v + noise * r.random_range(-1.0..1.0)).collect();
    (x, y)
}

fn image(v: &[f64], n: usize) -> Image<f64> {
    Image::new(n, n, v.to_vec()).unwrap()
}

fn batch(v: &[f64], n: usize) -> Tensor<f64> {
    Tensor::new(&[1, 1, n, n], v.to_vec()).unwrap()
}

fn scalar(
    f: impl Fn(&mut Tape<f64>, essgan::Var, essgan::Var) -> essgan::Result<essgan::Var>,
    a: &Tensor<f64>,
    b: &Tensor<f64>,
) -> f64 {
    let mut t = Tape::new();
    let (x, y) = (t.constant(a.clone()), t.constant(b.clone()));
    let v = f(&mut t, x, y).unwrap();
    t.value(v).item()
}

#[test]
fn ssim_matches_sliding_window_oracle() {
    for n in [16, 64] {
        for seed in 0..5 {
            for noise in [0.1, 0.5, 2.0] {
                let (x, y) = random_pair(n, seed, noise);
                let fast = ssim_value(&image(&x, n), &image(&y, n), &SsimParams::default()).unwrap();
                let slow = naive_ssim(&x, &y, n, n);
                assert!(
                    (fast - slow).abs() < 1e-6,
                    "n={n} seed={seed} noise={noise}: {fast} vs {slow}"
                );
            }
        }
    }
}

#[test]
fn ms_ssim_matches_multi_scale_oracle() {
    let p = MsSsimParams::with_scales(3);
    for seed in 0..5 {
        for noise in [0.1, 0.5, 2.0] {
            let (x, y) = random_pair(64, seed, noise);
            let fast = ms_ssim_value(&image(&x, 64), &image(&y, 64), &p).unwrap();
            let slow = naive_ms_ssim(&x, &y, 64, 64, &p.betas, p.alpha);
            assert!(
                (fast - slow).abs() < 1e-6,
                "seed={seed} noise={noise}: {fast} vs {slow}"
            );
        }
    }
}

#[test]
fn ms_ssim_with_distinct_luminance_exponent_matches_oracle() {
    let mut p = MsSsimParams::with_scales(2);
    p.alpha = 0.7;
    let (x, y) = random_pair(32, 3, 0.3);
    let fast = ms_ssim_value(&image(&x, 32), &image(&y, 32), &p).unwrap();
    let slow = naive_ms_ssim(&x, &y, 32, 32, &p.betas, p.alpha);
    assert!((fast - slow).abs() < 1e-6);
}

#[test]
fn anticorrelated_pairs_hit_the_floor_like_the_oracle() {
    let mut r = rng(8);
    let x: Vec<f64> = (0..64 * 64).map(|_| r.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
    let p = MsSsimParams::with_scales(3);
    let fast = ms_ssim_value(&image(&x, 64), &image(&y, 64), &p).unwrap();
    let slow = naive_ms_ssim(&x, &y, 64, 64, &p.betas, p.alpha);
    assert!(fast.is_finite() && (fast - slow).abs() < 1e-6);
}

#[test]
fn identical_inputs_give_exact_identities() {
    for seed in 0..5 {
        let (x, _) = random_pair(64, seed, 0.0);
        let t = batch(&x, 64);
        let p = MsSsimParams::with_scales(3);
        assert_eq!(scalar(|tp, a, b| ssim(tp, a, b, &SsimParams::default()), &t, &t), 1.0);
        assert_eq!(scalar(|tp, a, b| ms_ssim(tp, a, b, &p), &t, &t), 1.0);
        assert_eq!(scalar(|tp, a, b| ms_ssim_loss(tp, a, b, &p), &t, &t), 0.0);
        assert_eq!(scalar(grad_loss, &t, &t), 0.0);
        assert_eq!(scalar(|tp, a, b| es_loss(tp, a, b, &p), &t, &t), 0.0);
        assert_eq!(scalar(l1_loss, &t, &t), 0.0);
        assert_eq!(scalar(l2_loss, &t, &t), 0.0);
    }
}

#[test]
fn one_scale_ms_ssim_is_ssim() {
    let p = MsSsimParams::with_scales(1);
    assert_eq!(p.betas, vec![1.0]);
    for seed in 0..5 {
        let (x, y) = random_pair(32, seed, 0.4);
        let (a, b) = (image(&x, 32), image(&y, 32));
        let ms = ms_ssim_value(&a, &b, &p).unwrap();
        let s = ssim_value(&a, &b, &p.ssim).unwrap();
        assert!((ms - s).abs() < 1e-12, "{ms} vs {s}");
    }
}

#[test]
fn grad_loss_of_a_ramp_by_hand() {
    // x = 2r + 3c against a zero image: every vertical difference is 2 and
    // every horizontal one 3, so the sum is 4*(H-1)*W + 9*H*(W-1).
    let (h, w) = (5usize, 7usize);
    let ramp = Tensor::new(
        &[1, 1, h, w],
        (0..h * w).map(|i| (2 * (i / w) + 3 * (i % w)) as f64).collect(),
    )
    .unwrap();
    let zero = Tensor::new(&[1, 1, h, w], vec![0.0; h * w]).unwrap();
    let expect = (4 * (h - 1) * w + 9 * h * (w - 1)) as f64 / (h * w) as f64;
    assert!((scalar(grad_loss, &ramp, &zero) - expect).abs() < 1e-12);
    assert_eq!(scalar(grad_loss, &ramp, &ramp.map(|v| v + 5.0)), 0.0);
}

#[test]
fn es_loss_is_ms_ssim_loss_plus_grad_loss() {
    let p = MsSsimParams::with_scales(2);
    for seed in 0..5 {
        let (x, y) = random_pair(32, seed, 0.3);
        let (a, b) = (batch(&x, 32), batch(&y, 32));
        let es = scalar(|t, u, v| es_loss(t, u, v, &p), &a, &b);
        let ms = scalar(|t, u, v| ms_ssim_loss(t, u, v, &p), &a, &b);
        let g = scalar(grad_loss, &a, &b);
        assert!((es - (ms + g)).abs() < 1e-12);
        let reversed = scalar(|t, u, v| ssim(t, u, v, &SsimParams::default()), &b, &a);
        let forward = scalar(|t, u, v| ssim(t, u, v, &SsimParams::default()), &a, &b);
        assert!((reversed - forward).abs() < 1e-12);
    }
}

#[test]
fn pixel_losses_match_plain_sums() {
    let (x, y) = random_pair(8, 4, 0.7);
    let manual_l1 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / 64.0;
    let manual_l2 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 64.0;
    let (a, b) = (batch(&x, 8), batch(&y, 8));
    assert!((scalar(l1_loss, &a, &b) - manual_l1).abs() < 1e-14);
    assert!((scalar(l2_loss, &a, &b) - manual_l2).abs() < 1e-14);
}

#[test]
fn structural_losses_pass_finite_differences() {
    let p = MsSsimParams::with_scales(2);
    for seed in 0..3 {
        let (x, y) = random_pair(24, seed, 0.3);
        let inputs = [batch(&x, 24), batch(&y, 24)];
        let err = op_grad_error(&inputs, &|t, v| es_loss(t, v[0], v[1], &p), seed, 1e-5).unwrap();
        assert!(err < 1e-4, "es seed {seed}: {err:e}");
        let err = op_grad_error(&inputs, &|t, v| ssim(t, v[0], v[1], &p.ssim), seed, 1e-5).unwrap();
        assert!(err < 1e-4, "ssim seed {seed}: {err:e}");
    }
}

#[test]
fn discriminator_loss_is_minimized_at_the_labels() {
    let eval = |real: f64, fake: f64| {
        let mut t = Tape::new();
        let r = t.constant(Tensor::new(&[1, 1], vec![real]).unwrap());
        let f = t.constant(Tensor::new(&[1, 1], vec![fake]).unwrap());
        let l = d_loss(&mut t, r, f).unwrap();
        t.value(l).item()
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 1..20 {
        for j in 1..20 {
            let (a, b) = (i as f64 / 20.0, j as f64 / 20.0);
            let v = eval(a, b);
            if v < best.0 {
                best = (v, a, b);
            }
        }
    }
    assert_eq!((best.1, best.2), (0.95, 0.05));
    assert!((eval(0.5, 0.5) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!(eval(1.0, 0.0).is_finite());
}

#[test]
fn generator_adversarial_term_falls_as_d_is_fooled() {
    let eval = |p: f64| {
        let mut t = Tape::new();
        let f = t.constant(Tensor::new(&[1, 1], vec![p]).unwrap());
        let l = g_adv_loss(&mut t, f).unwrap();
        t.value(l).item()
    };
    assert!(eval(0.2) > eval(0.5) && eval(0.5) > eval(0.9));
    assert!((eval(0.5) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn optimal_discriminator_on_a_two_point_support() {
    let check = optimal_d_check(&[0.7, 0.3], &[0.4, 0.6], 100_000).unwrap();
    // Closed forms: 0.7 / 1.1 and 0.3 / 0.9.
    let expect = [7.0 / 11.0, 1.0 / 3.0];
    for (k, e) in expect.iter().enumerate() {
        assert!((check.d_grid[k] - e).abs() < 1e-3);
        assert!((check.d_closed[k] - e).abs() < 1e-12);
    }
    assert!((check.d_grid[0] - 0.6364).abs() < 1e-3 && (check.d_grid[1] - 0.3333).abs() < 1e-3);
    assert!((check.value_at_optimum - check.jsd_expression).abs() < 1e-3);
    let same = optimal_d_check(&[0.5, 0.5], &[0.5, 0.5], 1000).unwrap();
    assert!((same.value_at_optimum + 2.0 * std::f64::consts::LN_2).abs() < 1e-9);
}

#[test]
fn ms_ssim_rejects_images_too_small_for_the_scales() {
    let p = MsSsimParams::with_scales(3);
    let (x, y) = random_pair(32, 0, 0.1);
    let err = ms_ssim_value(&image(&x, 32), &image(&y, 32), &p).unwrap_err();
    assert!(err.to_string().contains("fewer scales"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>(), noise in 0.0f64..3.0) {
        let (x, y) = random_pair(16, seed, noise);
        let p = SsimParams::default();
        let a = ssim_value(&image(&x, 16), &image(&y, 16), &p).unwrap();
        let b = ssim_value(&image(&y, 16), &image(&x, 16), &p).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn optimal_discriminator_matches_the_closed_form(a in 0.05f64..0.95, b in 0.05f64..0.95) {
        let check = optimal_d_check(&[a, 1.0 - a], &[b, 1.0 - b], 20_000).unwrap();
        for k in 0..2 {
            prop_assert!((check.d_grid[k] - check.d_closed[k]).abs() < 1e-3);
        }
        prop_assert!((check.value_at_optimum - check.jsd_expression).abs() < 1e-3);
    }
}
