mod common;

use common::oracles::pair_count_auroc;
use ecgssl::objectives::{auroc, infonce_loss, metrics, reconstruction_loss, total_loss};
use ecgssl::objectives::{binary_cross_entropy, cross_entropy};
use ecgssl::stdm::{sample_mask, Role, StdmParams};
use ecgssl::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn auroc_matches_pair_counting_on_every_labelling() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in 1..=12usize {
        for bits in 0u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            for levels in [2, 5, 1000] {
                let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
                let (got, want) = (auroc(&scores, &labels), pair_count_auroc(&scores, &labels));
                match (got, want) {
                    (Some(g), Some(w)) => assert!((g - w).abs() <= 1e-12, "n={n} bits={bits:b}"),
                    (None, None) => {}
                    other => panic!("defined-ness differs: {other:?}"),
                }
            }
        }
    }
}

#[test]
fn infonce_hand_values() {
    let one = Tensor::<f64>::from_f64(&[1, 3], &[0.3, -1.0, 2.0]).unwrap();
    let other = Tensor::<f64>::from_f64(&[1, 3], &[5.0, 1.0, 0.0]).unwrap();
    assert!(infonce_loss(&one, &other, 0.2).unwrap().abs() <= 1e-12);

    let e = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
    let want = (1.0 + (-5.0f64).exp()).ln();
    assert!((infonce_loss(&e, &e, 0.2).unwrap() - want).abs() <= 1e-9);
    assert!(infonce_loss(&e, &e, 0.0).is_err());
}

#[test]
fn classification_losses_match_direct_formulas() {
    let logits = [1.0, -2.0, 0.5, 0.0, 3.0, -1.0];
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::<f64>::from_f64(&[2, 3], &logits).unwrap());
    let ce = cross_entropy(x, &[2, 1]).unwrap().value().item();
    let lse = |row: &[f64]| row.iter().map(|v| v.exp()).sum::<f64>().ln();
    let want = ((lse(&logits[..3]) - logits[2]) + (lse(&logits[3..]) - logits[4])) / 2.0;
    assert!((ce - want).abs() <= 1e-12);

    let y = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let bce = binary_cross_entropy(x, &Tensor::<f64>::from_f64(&[2, 3], &y).unwrap()).unwrap().value().item();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let want = -logits.iter().zip(y).map(|(&z, t)| t * sig(z).ln() + (1.0 - t) * (1.0 - sig(z)).ln()).sum::<f64>() / 6.0;
    assert!((bce - want).abs() <= 1e-12);
}

#[test]
fn macro_f1_skips_classes_nobody_mentions() {
    // three samples, four classes; class 3 is neither predicted nor present
    let probs = [0.7, 0.2, 0.1, 0.0, 0.1, 0.8, 0.1, 0.0, 0.6, 0.3, 0.1, 0.0];
    let labels = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0];
    let m = metrics(&probs, &labels, 4, false).unwrap();
    assert!((m.acc - 2.0 / 3.0).abs() <= 1e-12);
    // class 0: tp 1 fp 1 -> 2/3; class 1: 1; class 2: fn 1 -> 0
    assert!((m.macro_f1 - (2.0 / 3.0 + 1.0 + 0.0) / 3.0).abs() <= 1e-12);
}

#[test]
fn total_is_the_weighted_sum() {
    assert_eq!(total_loss(2.0, 3.0, 1.0, 1.0), 5.0);
    assert_eq!(total_loss(2.0, 3.0, 0.0, 0.5), 1.5);
}

fn random_rows(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Vec<f64> {
    (0..b * d).map(|_| rng.random_range(-2.0..2.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn infonce_ignores_row_norms(seed in any::<u64>(), b in 1usize..6, d in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, t) = (random_rows(&mut rng, b, d), random_rows(&mut rng, b, d));
        let scales: Vec<f64> = (0..2 * b).map(|_| rng.random_range(0.1..10.0)).collect();
        let scaled = |v: &[f64], off: usize| -> Vec<f64> { v.iter().enumerate().map(|(i, x)| x * scales[off + i / d]).collect() };
        let base = infonce_loss(&Tensor::<f64>::from_f64(&[b, d], &s).unwrap(), &Tensor::<f64>::from_f64(&[b, d], &t).unwrap(), 0.2).unwrap();
        let moved = infonce_loss(
            &Tensor::<f64>::from_f64(&[b, d], &scaled(&s, 0)).unwrap(),
            &Tensor::<f64>::from_f64(&[b, d], &scaled(&t, b)).unwrap(),
            0.2,
        ).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn reconstruction_ignores_unmasked_cells(seed in any::<u64>(), bump in -100.0f64..100.0) {
        let (c, n, p) = (4, 6, 5);
        let plan = sample_mask(c, n, &StdmParams { p_time: 0.5, p_lead: 0.3, k: 2 }, seed).unwrap();
        prop_assume!(plan.count(Role::Masked) > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = Tensor::<f64>::from_f64(&[c, n, p], &random_rows(&mut rng, c * n, p)).unwrap();
        let x_hat = Tensor::<f64>::from_f64(&[c, n, p], &random_rows(&mut rng, c * n, p)).unwrap();
        let base = reconstruction_loss(&x, &x_hat, &plan).unwrap();

        let mut x2 = x.clone();
        let mut x_hat2 = x_hat.clone();
        for cell in plan.indices(Role::Visible).into_iter().chain(plan.indices(Role::Dropped)) {
            for j in 0..p {
                x2.data_mut()[cell * p + j] += bump;
                x_hat2.data_mut()[cell * p + j] -= bump;
            }
        }
        let moved = reconstruction_loss(&x2, &x_hat2, &plan).unwrap();
        prop_assert_eq!(base.to_bits(), moved.to_bits());

        let masked = plan.indices(Role::Masked);
        let direct: f64 = masked.iter()
            .flat_map(|&cell| (0..p).map(move |j| cell * p + j))
            .map(|i| (x.data()[i] - x_hat.data()[i]).powi(2))
            .sum::<f64>() / masked.len() as f64;
        prop_assert!((base - direct).abs() <= 1e-9 * direct.max(1.0));
    }
}
