use ecgssl::model::params::{self, FDA_IMPORTANCE};
use ecgssl::model::{full_input, mean_pool, Bound, Encoded, Model, ModelConfig, ParamStore, TokenInput};
use ecgssl::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ModelConfig {
    ModelConfig { n_leads: 4, n_patches: 5, patch_len: 6, ..ModelConfig::toy() }
}

fn patches(cfg: &ModelConfig, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_leads * cfg.n_patches * cfg.patch_len;
    Tensor::from_f64(&[cfg.n_leads, cfg.n_patches, cfg.patch_len], &(0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>())
        .unwrap()
}

fn store(cfg: &ModelConfig) -> ParamStore<f64> {
    params::init_pretrain(cfg, cfg.n_leads, 16, 9)
}

#[test]
fn encoder_is_permutation_equivariant() {
    let cfg = config();
    let model = Model::new(cfg.clone()).unwrap();
    let ps = store(&cfg);
    let x = patches(&cfg, 1);
    let cells: Vec<usize> = vec![0, 3, 7, 8, 12, 19];
    let mut shuffled = cells.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(2));

    let g = Graph::new();
    let p = Bound::bind(&g, &ps, |_| false);
    let xv = g.constant(x);
    let lead_ids: Vec<usize> = (0..cfg.n_leads).collect();
    let run = |cells: &[usize]| {
        let input = TokenInput { patches: xv, lead_ids: lead_ids.clone(), cells: cells.to_vec() };
        model.encode(&p, "encoder", &[input]).unwrap().x.value()
    };
    let (a, b) = (run(&cells), run(&shuffled));
    let d = cfg.dim;
    for (row_b, cell) in shuffled.iter().enumerate() {
        let row_a = cells.iter().position(|c| c == cell).unwrap();
        for j in 0..d {
            assert!((a.at(&[row_a, j]) - b.at(&[row_b, j])).abs() <= 1e-12);
        }
    }
}

#[test]
fn teacher_matches_student_before_training() {
    let cfg = config();
    let model = Model::new(cfg.clone()).unwrap();
    let ps = store(&cfg);
    let g = Graph::new();
    let p = Bound::bind(&g, &ps, |_| false);
    let batch = [full_input(g.constant(patches(&cfg, 3)), (0..cfg.n_leads).collect())];
    let teacher = model.teacher_forward(&p, &batch).unwrap().value();
    let enc = model.encode(&p, "encoder", &batch).unwrap();
    let student = model.project(&p, "projection", mean_pool(&enc).unwrap()).unwrap().value();
    assert_eq!(teacher.to_f64_vec(), student.to_f64_vec());
    assert!(ps.get(FDA_IMPORTANCE).unwrap().data().iter().all(|&w| w == 0.0));
}

#[test]
fn mean_pool_averages_each_segment() {
    let g = Graph::<f64>::new();
    let rows: Vec<f64> = (0..10).map(f64::from).collect();
    let x = g.constant(Tensor::from_f64(&[5, 2], &rows).unwrap());
    let segments = vec![
        ecgssl::model::Segment { start: 0, len: 2 },
        ecgssl::model::Segment { start: 2, len: 3 },
    ];
    let pooled = mean_pool(&Encoded { x, segments }).unwrap().value();
    assert_eq!(pooled.shape(), &[2, 2]);
    assert_eq!(pooled.to_f64_vec(), vec![1.0, 2.0, 6.0, 7.0]);
}

#[test]
fn decoder_output_ignores_masked_content() {
    let cfg = config();
    let model = Model::new(cfg.clone()).unwrap();
    let ps = store(&cfg);
    let visible = vec![1, 4, 6, 13];
    let run = |x: Tensor<f64>| {
        let g = Graph::new();
        let p = Bound::bind(&g, &ps, |_| false);
        let input = TokenInput { patches: g.constant(x), lead_ids: (0..cfg.n_leads).collect(), cells: visible.clone() };
        let enc = model.encode(&p, "encoder", std::slice::from_ref(&input)).unwrap();
        model.decode_time(&p, &enc, &[input]).unwrap().x.value()
    };
    let x = patches(&cfg, 4);
    let mut y = x.clone();
    for cell in (0..cfg.n_leads * cfg.n_patches).filter(|c| !visible.contains(c)) {
        for j in 0..cfg.patch_len {
            y.data_mut()[cell * cfg.patch_len + j] = 1e3;
        }
    }
    let (a, b) = (run(x), run(y));
    assert_eq!(a.shape(), &[cfg.n_leads * cfg.n_patches, cfg.patch_len]);
    assert_eq!(a.to_f64_vec(), b.to_f64_vec());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shapes_hold_for_random_small_configs(
        heads in 1usize..3,
        half_head in 1usize..3,
        layers in 1usize..3,
        n_leads in 1usize..4,
        n_patches in 1usize..5,
        patch_len in 1usize..5,
        batch in 1usize..3,
        seed in any::<u64>(),
    ) {
        let cfg = ModelConfig {
            dim: heads * 2 * half_head,
            heads,
            enc_layers: layers,
            latent_dec_layers: layers,
            time_dec_layers: layers,
            patch_len,
            n_leads,
            n_patches,
            proj_hidden: 5,
            proj_out: 3,
        };
        let model = Model::new(cfg.clone()).unwrap();
        let ps = params::init_pretrain::<f64>(&cfg, n_leads, 4, seed);
        let g = Graph::new();
        let p = Bound::bind(&g, &ps, |_| false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<_> = (0..batch)
            .map(|i| {
                let mut cells: Vec<usize> = (0..n_leads * n_patches).filter(|_| rng.random_bool(0.5)).collect();
                if cells.is_empty() {
                    cells.push(0);
                }
                TokenInput { patches: g.constant(patches(&cfg, seed ^ i as u64)), lead_ids: (0..n_leads).collect(), cells }
            })
            .collect();
        let visible: usize = inputs.iter().map(|s| s.cells.len()).sum();
        let enc = model.encode(&p, "encoder", &inputs).unwrap();
        prop_assert_eq!(enc.x.shape(), vec![visible, cfg.dim]);
        let rec = model.decode_time(&p, &enc, &inputs).unwrap();
        prop_assert_eq!(rec.x.shape(), vec![batch * n_leads * n_patches, patch_len]);
        let global = model.decode_latent_global(&p, &enc, &inputs).unwrap();
        prop_assert_eq!(global.shape(), vec![batch, cfg.dim]);
        prop_assert_eq!(model.project(&p, "projection", global).unwrap().shape(), vec![batch, 3]);
    }
}
