use ecgssl::fda;
use ecgssl::model::params::{self, FDA_IMPORTANCE};
use ecgssl::model::{Bound, Model, ModelConfig, ParamStore};
use ecgssl::stdm::{sample_mask, StdmParams};
use ecgssl::tensor::{Graph, Tensor};
use ecgssl::train::{batch_objective, SampleInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig { n_leads: 3, n_patches: 6, patch_len: 10, ..ModelConfig::toy() }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.random_range(-1.7..1.7)).collect()
}

fn setup() -> (Model, ParamStore<f64>, Vec<SampleInput<f64>>) {
    let cfg = small_config();
    let (c, n, pl) = (cfg.n_leads, cfg.n_patches, cfg.patch_len);
    let k = fda::bins(n * pl);
    let mut store = params::init_pretrain::<f64>(&cfg, c, k, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // move away from the zero-initialised head and FDA weights so every path carries gradient
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        if name.starts_with("time_decoder.head") || name == FDA_IMPORTANCE || name.ends_with("mask_token") {
            let shape = store.get(&name).unwrap().shape().to_vec();
            let v = uniform(&mut rng, shape.iter().product(), 0.3);
            store.insert(name, Tensor::from_f64(&shape, &v).unwrap());
        }
    }
    params::sync_teacher(&mut store).unwrap();
    let stdm = StdmParams { p_time: 0.4, p_lead: 0.3, k: 2 };
    let samples = (0..2u64)
        .map(|i| {
            let patches = Tensor::from_f64(&[c, n, pl], &uniform(&mut rng, c * n * pl, 1.0)).unwrap();
            let noise = fda::noise_term(store.get(FDA_IMPORTANCE).unwrap(), 1e-6, 40 + i).unwrap().0;
            let mut seed = 100 + i;
            let plan = loop {
                let plan = sample_mask(c, n, &stdm, seed).unwrap();
                if plan.count(ecgssl::stdm::Role::Visible) > 0 && plan.count(ecgssl::stdm::Role::Masked) > 0 {
                    break plan;
                }
                seed += 1000;
            };
            SampleInput { patches, lead_ids: (0..c).collect(), plan, noise: Some(noise) }
        })
        .collect();
    (Model::new(cfg).unwrap(), store, samples)
}

fn trainable(name: &str) -> bool {
    !params::is_teacher(name)
}

fn objective(model: &Model, store: &ParamStore<f64>, samples: &[SampleInput<f64>]) -> f64 {
    let g = Graph::new();
    let p = Bound::bind(&g, store, |_| false);
    batch_objective(&g, model, &p, samples, (1.0, 1.0), 0.2).unwrap().total.value().item()
}

pub struct GradientSweep {
    pub worst: f64,
    pub at: String,
    pub checked: usize,
}

/// Central-difference check of `L_rec + L_con` on a small float64 batch,
/// over the largest-gradient entry and two random entries of every student
/// parameter and the FDA weights.
pub fn joint_objective_gradient_sweep() -> GradientSweep {
    let (model, store, samples) = setup();
    let g = Graph::new();
    let p = Bound::bind(&g, &store, trainable);
    let obj = batch_objective(&g, &model, &p, &samples, (1.0, 1.0), 0.2).unwrap();
    let grads = g.backward(obj.total).unwrap();

    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for name in p.trainable() {
        let analytic = grads.get_or_zeros(p.get(name).unwrap()).to_f64_vec();
        let len = analytic.len();
        let largest = (0..len).max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs())).unwrap();
        let mut picks = vec![largest, rng.random_range(0..len), rng.random_range(0..len)];
        picks.dedup();
        for i in picks {
            let mut plus = store.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = store.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let numeric = (objective(&model, &plus, &samples) - objective(&model, &minus, &samples)) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            checked += 1;
            if rel > worst.0 {
                worst = (rel, format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}"));
            }
        }
    }
    GradientSweep { worst: worst.0, at: worst.1, checked }
}
