mod common;

use common::{synthetic_cache, toy_setup};
use ecgssl::model::params::{self, FDA_IMPORTANCE};
use ecgssl::model::ParamStore;
use ecgssl::signal::manifest::Split;
use ecgssl::tensor::checkpoint::Checkpoint;
use ecgssl::train::pretrain::{pretrain_checkpoint, prepare_batch, PretrainState};
use ecgssl::train::{finetune, pretrain, Ablation, TrainConfig};

fn short(ablation: Ablation) -> TrainConfig {
    TrainConfig { epochs: 2, batch_size: 4, ablation, ..TrainConfig::toy_pretrain() }
}

fn one_step(ablation: Ablation) -> (ParamStore<f32>, PretrainState, Vec<(String, ecgssl::tensor::Tensor<f32>)>) {
    let cache = synthetic_cache(12, 1);
    let setup = toy_setup(short(ablation));
    let mut state = PretrainState::new(&setup, cache.n_leads()).unwrap();
    let before = state.params.clone();
    let idx = &cache.indices(Split::Train)[..4];
    let samples = prepare_batch(&cache, idx, 1, &setup, state.params.get(FDA_IMPORTANCE).unwrap()).unwrap();
    let out = state.step(&samples, &setup.train, 1e-3).unwrap();
    (before, state, out.grads)
}

fn all_zero(grads: &[(String, ecgssl::tensor::Tensor<f32>)], prefix: &str) -> bool {
    grads.iter().filter(|(n, _)| n.starts_with(prefix)).all(|(_, g)| g.data().iter().all(|&v| v == 0.0))
}

#[test]
fn teacher_follows_the_ema_of_the_student() {
    let (before, state, _) = one_step(Ablation::Core);
    let m = short(Ablation::Core).ema_momentum;
    for (name, teacher) in state.params.iter().filter(|(n, _)| params::is_teacher(n)) {
        let student = name.trim_start_matches(params::TEACHER_PREFIX);
        let (old, new) = (before.get(name).unwrap(), state.params.get(student).unwrap());
        for ((t, o), s) in teacher.data().iter().zip(old.data()).zip(new.data()) {
            let want = m * *o as f64 + (1.0 - m) * *s as f64;
            assert!((*t as f64 - want).abs() <= 1e-6 * want.abs().max(1.0), "{name}");
        }
    }
}

#[test]
fn disabled_branches_get_no_gradient() {
    let (before, state, grads) = one_step(Ablation::ContrastiveOnly);
    assert!(all_zero(&grads, "time_decoder."));
    for (name, t) in before.iter().filter(|(n, _)| n.starts_with("time_decoder.")) {
        assert_eq!(t.data(), state.params.get(name).unwrap().data(), "{name} moved");
    }
    assert!(!all_zero(&grads, "latent_decoder."));

    let (before, state, grads) = one_step(Ablation::ReconstructiveOnly);
    assert!(all_zero(&grads, "latent_decoder.") && all_zero(&grads, "projection."));
    for (name, t) in before.iter().filter(|(n, _)| n.starts_with("latent_decoder.") || n.starts_with("projection.")) {
        assert_eq!(t.data(), state.params.get(name).unwrap().data(), "{name} moved");
    }
    assert!(!all_zero(&grads, "time_decoder."));
}

#[test]
fn teacher_and_disabled_fda_are_frozen() {
    let cache = synthetic_cache(12, 1);
    let setup = toy_setup(TrainConfig { fda_enabled: false, ..short(Ablation::Core) });
    let mut state = PretrainState::new(&setup, cache.n_leads()).unwrap();
    let idx = &cache.indices(Split::Train)[..4];
    let samples = prepare_batch(&cache, idx, 1, &setup, state.params.get(FDA_IMPORTANCE).unwrap()).unwrap();
    assert!(samples.iter().all(|s| s.noise.is_none()));
    let out = state.step(&samples, &setup.train, 1e-3).unwrap();
    assert!(out.grads.iter().all(|(n, _)| !params::is_teacher(n) && n != FDA_IMPORTANCE));
    assert!(state.params.get(FDA_IMPORTANCE).unwrap().data().iter().all(|&w| w == 0.0));
}

#[test]
fn identical_runs_are_bitwise_identical_and_checkpoints_round_trip() {
    let cache = synthetic_cache(12, 2);
    let setup = toy_setup(short(Ablation::Core));
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: Vec<_> = dirs.iter().map(|d| pretrain(&setup, &cache, Some(d.path())).unwrap()).collect();
    assert!(runs[0].params.bitwise_eq(&runs[1].params));
    for epoch in 0..2 {
        let bytes: Vec<Vec<u8>> = runs.iter().map(|r| std::fs::read(&r.checkpoints[epoch]).unwrap()).collect();
        assert_eq!(bytes[0], bytes[1]);
    }
    assert_eq!(runs[0].epochs.len(), 2);
    let logged = std::fs::read_to_string(dirs[0].path().join("pretrain_steps.ndjson")).unwrap();
    assert_eq!(logged.lines().count(), runs[0].steps.len());

    let loaded = ParamStore::<f32>::from_checkpoint(&Checkpoint::load(&runs[0].checkpoints[1]).unwrap()).unwrap();
    assert!(loaded.bitwise_eq(&runs[0].params));

    let other = pretrain(&toy_setup(TrainConfig { seed: 5, ..short(Ablation::Core) }), &cache, None).unwrap();
    assert!(!other.params.bitwise_eq(&runs[0].params));
}

#[test]
fn finetune_starts_from_the_pretrained_encoder_and_logs_metrics() {
    let cache = synthetic_cache(20, 3);
    let setup = toy_setup(TrainConfig { epochs: 1, warmup_epochs: 0, batch_size: 8, ..short(Ablation::Core) });
    let pre = pretrain(&setup, &cache, None).unwrap();
    let ck = pretrain_checkpoint(&setup, &pre.params, 1, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let tc = TrainConfig { epochs: 2, ..TrainConfig::toy_finetune() };
    let ft = finetune(&setup.model, &tc, Some(&ck), &cache, Some(dir.path())).unwrap();
    assert_eq!(ft.history.len(), 2);
    assert!((1..=2).contains(&ft.best_epoch));
    let test = ft.test.unwrap().metrics;
    assert!((0.0..=1.0).contains(&test.acc));
    assert!(dir.path().join("finetune_best.ckpt").exists());
    let lines = std::fs::read_to_string(dir.path().join("finetune_metrics.ndjson")).unwrap();
    assert_eq!(lines.lines().count(), 3);

    let init = ecgssl::train::finetune::init_finetune(&setup.model, cache.n_classes(), 0, Some(&ck)).unwrap();
    for (name, t) in init.iter().filter(|(n, _)| n.starts_with("encoder.")) {
        assert_eq!(t.data(), pre.params.get(name).unwrap().data());
    }
}
