use ecgssl::stdm::{apply_mask, sample_mask, uniform_random_mask, MaskPlan, Role, StdmParams};
use ecgssl::tensor::Tensor;
use proptest::prelude::*;

fn column_shapes_hold(plan: &MaskPlan, k: usize) -> bool {
    (0..plan.n_patches()).all(|col| {
        let roles: Vec<Role> = (0..plan.n_leads()).map(|l| plan.role(l, col)).collect();
        let visible = roles.iter().filter(|&&r| r == Role::Visible).count();
        let all_masked = roles.iter().all(|&r| r == Role::Masked);
        all_masked || visible == k
    })
}

#[test]
fn rates_match_their_expectations() {
    let params = StdmParams { p_time: 0.5, p_lead: 0.2, k: 4 };
    let (c, n, plans) = (12, 30, 20_000u64);
    let (mut visible, mut dropped, mut masked_columns) = (0usize, 0usize, 0usize);
    for seed in 0..plans {
        let plan = sample_mask(c, n, &params, seed).unwrap();
        visible += plan.count(Role::Visible);
        dropped += plan.count(Role::Dropped);
        masked_columns += (0..n).filter(|&col| (0..c).all(|l| plan.role(l, col) == Role::Masked)).count();
    }
    let cells = (plans as usize * c * n) as f64;
    assert!((visible as f64 / cells - 1.0 / 6.0).abs() < 0.005);
    assert!((dropped as f64 / cells - 1.0 / 15.0).abs() < 0.005);
    assert!((masked_columns as f64 / (plans as usize * n) as f64 - 0.5).abs() < 0.01);
}

#[test]
fn same_seed_same_plan() {
    let p = StdmParams::default();
    assert_eq!(sample_mask(12, 30, &p, 42).unwrap(), sample_mask(12, 30, &p, 42).unwrap());
    assert_ne!(sample_mask(12, 30, &p, 42).unwrap(), sample_mask(12, 30, &p, 43).unwrap());
}

#[test]
fn invalid_parameters_rejected() {
    assert!(sample_mask(12, 30, &StdmParams { p_time: 1.5, p_lead: 0.2, k: 4 }, 0).is_err());
    assert!(sample_mask(12, 30, &StdmParams { p_time: 0.5, p_lead: -0.1, k: 4 }, 0).is_err());
    assert!(sample_mask(12, 30, &StdmParams { p_time: 0.5, p_lead: 0.2, k: 13 }, 0).is_err());
    assert!(sample_mask(12, 30, &StdmParams { p_time: 0.5, p_lead: 0.2, k: 0 }, 0).is_err());
    assert!(uniform_random_mask(12, 30, 1.2, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roles_partition_the_grid(
        seed in any::<u64>(),
        c in 1usize..14,
        n in 1usize..40,
        p_time in 0.0f64..=1.0,
        p_lead in 0.0f64..=1.0,
        k_frac in 0.0f64..1.0,
    ) {
        let k = 1 + ((c as f64 - 1.0) * k_frac) as usize;
        let plan = sample_mask(c, n, &StdmParams { p_time, p_lead, k }, seed).unwrap();
        let (v, m, d) = (plan.visible(), plan.masked(), plan.dropped());
        prop_assert!((0..c * n).all(|i| v[i] + m[i] + d[i] == 1));
        prop_assert!(column_shapes_hold(&plan, k));
        prop_assert_eq!(plan.count(Role::Visible) + plan.count(Role::Masked) + plan.count(Role::Dropped), c * n);
    }

    #[test]
    fn mask_views_add_back_to_the_input(seed in any::<u64>(), ratio in 0.0f64..=1.0) {
        let (c, n, p) = (3, 5, 4);
        let plan = uniform_random_mask(c, n, ratio, seed).unwrap();
        prop_assert_eq!(plan.count(Role::Dropped), 0);
        let x = Tensor::from_f64(&[c, n, p], &(0..c * n * p).map(|i| i as f64 + 1.0).collect::<Vec<_>>()).unwrap();
        let views = apply_mask(&x, &plan).unwrap();
        for i in 0..c * n * p {
            let parts = [views.visible.data()[i], views.masked.data()[i], views.dropped.data()[i]];
            prop_assert_eq!(parts.iter().sum::<f64>(), x.data()[i]);
            prop_assert_eq!(parts.iter().filter(|&&v| v != 0.0).count(), 1);
        }
        prop_assert_eq!(views.visible_positions.len(), plan.count(Role::Visible));
    }
}
