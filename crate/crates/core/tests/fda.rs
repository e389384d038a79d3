mod common;

use common::oracles::dft_oracle;
use ecgssl::fda::{augment, bins, importance_map, modulate, noise_term, per_lead_threshold, EPSILON};
use ecgssl::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_f64(shape, &(0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap()
}

fn apply(x: &Tensor<f64>, w: &Tensor<f64>, noise: &Tensor<f64>) -> Tensor<f64> {
    let g = Graph::new();
    modulate(g.constant(x.clone()), g.constant(w.clone()), noise).unwrap().value()
}

fn spectrum(x: &Tensor<f64>) -> Vec<f64> {
    let g = Graph::new();
    g.constant(x.clone()).rfft().unwrap().value().to_f64_vec()
}

#[test]
fn zero_weights_halve_the_input_for_any_seed() {
    let x = random(&[3, 150], 1, 2.0);
    let w = Tensor::zeros(&[3, bins(150)]);
    let mut outputs = Vec::new();
    for seed in [0, 1, 99] {
        let (noise, scale) = noise_term(&w, EPSILON, seed).unwrap();
        assert!(scale.lambda.iter().all(|&l| l == 0.0));
        let y = apply(&x, &w, &noise);
        let err = y.data().iter().zip(x.data()).map(|(y, x)| (y - 0.5 * x).abs()).fold(0.0, f64::max);
        let norm = x.data().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err / norm <= 1e-6);
        outputs.push(y);
    }
    assert_eq!(outputs[0].to_f64_vec(), outputs[1].to_f64_vec());
    assert_eq!(outputs[0].to_f64_vec(), outputs[2].to_f64_vec());
}

#[test]
fn length_eight_matches_direct_dft() {
    let (c, t) = (2, 8);
    let x = random(&[c, t], 3, 1.0);
    let w = random(&[c, bins(t)], 4, 2.0);
    let (noise, _) = noise_term(&w, EPSILON, 5).unwrap();
    let y = apply(&x, &w, &noise);
    let a = importance_map(&w);
    for lead in 0..c {
        let m: Vec<f64> =
            (0..bins(t)).map(|f| a.at(&[lead, f]) + noise.at(&[lead, f])).collect();
        let want = dft_oracle(&x.data()[lead * t..(lead + 1) * t], &m);
        for (n, want) in want.iter().enumerate() {
            assert!((y.at(&[lead, n]) - want).abs() <= 1e-9, "lead {lead} sample {n}");
        }
    }
}

#[test]
fn gated_bins_scale_by_importance_and_every_bin_keeps_its_phase() {
    let (c, t) = (3, 90);
    let k = bins(t);
    let x = random(&[c, t], 6, 1.0);
    let w = random(&[c, k], 7, 3.0);
    let (noise, scale) = noise_term(&w, EPSILON, 8).unwrap();
    let a = importance_map(&w).to_f64_vec();
    let theta = per_lead_threshold(&a, c, k);
    let (sx, sy) = (spectrum(&x), spectrum(&apply(&x, &w, &noise)));
    let mut gated = 0;
    for i in 0..c * k {
        let (xr, xi, yr, yi) = (sx[2 * i], sx[2 * i + 1], sy[2 * i], sy[2 * i + 1]);
        let mag = (xr * xr + xi * xi).max(1e-30);
        assert!((yi * xr - yr * xi).abs() <= 1e-9 * mag.max(1.0), "bin {i} changed phase");
        if a[i] >= theta[i / k] {
            gated += 1;
            assert_eq!(scale.lambda[i], 0.0);
            assert!((yr - a[i] * xr).abs() <= 1e-12 * xr.abs().max(1.0));
            assert!((yi - a[i] * xi).abs() <= 1e-12 * xi.abs().max(1.0));
        }
    }
    assert!(gated >= c * k / 2);
}

#[test]
fn augment_returns_patches() {
    let x = random(&[2, 150], 9, 1.0);
    let w = Tensor::zeros(&[2, bins(150)]);
    let y = augment(&x, &w, EPSILON, 0, 75).unwrap();
    assert_eq!(y.shape(), &[2, 2, 75]);
    assert!(augment(&x, &w, EPSILON, 0, 70).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn modulation_is_linear_in_the_signal(seed in 0u64..1000, t in 4usize..40) {
        let x1 = random(&[2, t], seed, 1.0);
        let x2 = random(&[2, t], seed + 1, 1.0);
        let w = random(&[2, bins(t)], seed + 2, 2.0);
        let (noise, _) = noise_term(&w, EPSILON, seed).unwrap();
        let sum = Tensor::new(vec![2, t], x1.data().iter().zip(x2.data()).map(|(a, b)| a + b).collect()).unwrap();
        let (y1, y2, ys) = (apply(&x1, &w, &noise), apply(&x2, &w, &noise), apply(&sum, &w, &noise));
        for i in 0..2 * t {
            prop_assert!((ys.data()[i] - y1.data()[i] - y2.data()[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn noise_scale_rows_have_unit_mean_or_are_all_gated(seed in 0u64..1000, k in 2usize..30) {
        let w = random(&[3, k], seed, 4.0);
        let (_, scale) = noise_term(&w, EPSILON, seed).unwrap();
        for row in scale.lambda.chunks(k) {
            let active: Vec<f64> = row.iter().copied().filter(|&l| l > 0.0).collect();
            prop_assert!(row.iter().all(|&l| l >= 0.0 && l.is_finite()));
            if !active.is_empty() {
                let mean = active.iter().sum::<f64>() / active.len() as f64;
                prop_assert!((mean - 1.0).abs() <= 1e-9);
            }
        }
    }
}
