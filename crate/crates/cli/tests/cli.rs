use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ecgssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecgssl")).args(args).env("RUST_LOG", "warn").output().expect("spawn ecgssl")
}

fn ok(args: &[&str]) -> Output {
    let out = ecgssl(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn grid(path: &Path) -> Vec<Vec<u8>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(ecgssl(&["--help"]).status.code(), Some(0));
    assert_eq!(ecgssl(&[]).status.code(), Some(1));
    assert_eq!(ecgssl(&["mask", "--bogus"]).status.code(), Some(1));
    assert_eq!(ecgssl(&["eval", "--config", "x.json", "--checkpoint", "c", "--split", "dev"]).status.code(), Some(1));
}

#[test]
fn mask_grids_partition_the_patch_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["mask", "--c", "12", "--n", "30", "--seed", "1", "--out", p(dir.path())]);
    let [v, m, d] = ["visible", "masked", "dropped"].map(|n| grid(&dir.path().join(format!("{n}.csv"))));
    for g in [&v, &m, &d] {
        assert_eq!(g.len(), 12);
        assert!(g.iter().all(|row| row.len() == 30));
    }
    for c in 0..12 {
        for n in 0..30 {
            assert_eq!(v[c][n] + m[c][n] + d[c][n], 1, "cell ({c}, {n})");
        }
    }
    assert_eq!(ecgssl(&["mask", "--c", "3", "--k", "5", "--out", p(dir.path())]).status.code(), Some(1));
}

#[test]
fn augment_is_deterministic_and_halves_with_zero_weights() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["augment", "--seed", "1", "--out", p(&a)]);
    ok(&["augment", "--seed", "1", "--out", p(&b)]);
    for f in ["augmented.cecg", "augmented.csv", "spectrum.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    ok(&["gen", "--n", "1", "--seed", "3", "--out", p(&dir.path().join("data"))]);
    let input = dir.path().join("data/syn00000.cecg");
    let out = dir.path().join("c");
    ok(&["augment", "--input", p(&input), "--seed", "9", "--out", p(&out)]);
    let fmt = ecgssl::signal::format::RecordFormat::Cecg;
    let x = ecgssl::signal::format::read_record(&input, fmt).unwrap();
    let y = ecgssl::signal::format::read_record(&out.join("augmented.cecg"), fmt).unwrap();
    assert_eq!(x.samples.len(), y.samples.len());
    let scale = x.samples.iter().fold(0f32, |m, v| m.max(v.abs()));
    let worst = x.samples.iter().zip(&y.samples).map(|(a, b)| (0.5 * a - b).abs()).fold(0f32, f32::max);
    assert!(worst <= 1e-5 * scale, "max deviation {worst} at scale {scale}");

    let spectrum = std::fs::read_to_string(out.join("spectrum.csv")).unwrap();
    let mut lines = spectrum.lines();
    assert_eq!(lines.next(), Some("lead,bin,importance,lambda,gated"));
    assert_eq!(lines.count(), 12 * (x.len() / 2 + 1));
}

#[test]
fn gen_is_deterministic_and_respects_class_mix() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen", "--n", "6", "--seed", "7", "--class-mix", "1,0,0,0", "--out", p(&a)]);
    ok(&["gen", "--n", "6", "--seed", "7", "--class-mix", "1,0,0,0", "--out", p(&b)]);
    let manifest: Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let records = manifest["records"].as_array().unwrap();
    assert_eq!(records.len(), 6);
    for r in records {
        let file = r["path"].as_str().unwrap();
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
        assert_eq!(r["label"], serde_json::json!(0), "{r}");
    }
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(ecgssl(&["gen", "--n", "4", "--class-mix", "1,-1", "--out", p(&a)]).status.code(), Some(1));
}

#[test]
fn preprocess_isolates_failing_records() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--n", "5", "--seed", "2", "--out", p(&data)]);
    let cache = dir.path().join("cache.bin");
    ok(&["preprocess", "--manifest", p(&data.join("manifest.json")), "--out", p(&cache)]);
    let loaded = ecgssl::train::PatchCache::load(&cache).unwrap();
    assert_eq!(loaded.len(), 5);
    assert_eq!(loaded.patch_grid(), (30, 75));
    assert_eq!(loaded.n_leads(), 12);

    std::fs::write(data.join("syn00001.cecg"), b"not a record").unwrap();
    let out = ecgssl(&["preprocess", "--manifest", p(&data.join("manifest.json")), "--out", p(&cache)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("syn00001"));
    assert_eq!(ecgssl::train::PatchCache::load(&cache).unwrap().len(), 4);
}

#[test]
fn config_errors_exit_with_usage_code_and_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"epochs": 2, "lr_max": 0.1}}"#).unwrap();
    let out = ecgssl(&["pretrain", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/train") && err.contains("lr_max"), "{err}");

    std::fs::write(&cfg, r#"{"model": {"heads": "two"}}"#).unwrap();
    let out = ecgssl(&["pretrain", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/model/heads"));
}

#[test]
fn thread_cap_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_ecgssl"))
            .args(["mask", "--c", "4", "--n", "4", "--out", p(dir.path())])
            .env("CORE_ECG_THREADS", v)
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(run("2"), Some(0));
    assert_eq!(run("0"), Some(1));
    assert_eq!(run("many"), Some(1));
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--seeds", "1"]);
    let lines: Vec<Value> =
        String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), ecgssl::tensor::gradcheck::all_primitives().len());
    assert!(lines.iter().all(|l| l["pass"] == Value::Bool(true)));
}

fn toy_config(dir: &Path, epochs: usize, phase: &str) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "data": { "cache": "cache.bin", "manifest": "data/manifest.json" },
        "model": { "dim": 16, "heads": 2, "enc_layers": 1, "latent_dec_layers": 1, "time_dec_layers": 1,
                   "proj_hidden": 16, "proj_out": 8 },
        "train": { "phase": phase, "epochs": epochs, "batch_size": 4, "lr": 1e-3, "warmup_epochs": 0, "seed": 5 },
        "stdm": { "k": 3 },
        "output_dir": format!("out_{phase}")
    });
    let path = dir.join(format!("{phase}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn pretrain_finetune_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--n", "16", "--seed", "4", "--out", p(&dir.path().join("data"))]);
    let pre = toy_config(dir.path(), 1, "pretrain");
    ok(&["pretrain", "--config", p(&pre)]);
    assert!(dir.path().join("cache.bin").exists());
    let out_pre = dir.path().join("out_pretrain");
    let ck = out_pre.join("checkpoints/pretrain_epoch_001.ckpt");
    assert!(ck.exists());
    assert_eq!(std::fs::read_to_string(out_pre.join("pretrain_epochs.ndjson")).unwrap().lines().count(), 1);

    let ft = toy_config(dir.path(), 2, "finetune");
    let out = ok(&["finetune", "--config", p(&ft), "--checkpoint", p(&ck)]);
    let test: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(test["split"], "test");
    let best = dir.path().join("out_finetune/finetune_best.ckpt");

    let out = ok(&["eval", "--config", p(&ft), "--checkpoint", p(&best), "--split", "test"]);
    let eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(eval["split"], "test");
    assert!(eval["n"].as_u64().unwrap() > 0);
    assert_eq!(eval["acc"], test["acc"]);
    assert_eq!(eval["macro_f1"], test["macro_f1"]);
}

#[test]
fn sweep_writes_one_row_per_grid_cell() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--n", "12", "--seed", "8", "--out", p(&dir.path().join("data"))]);
    let cfg = toy_config(dir.path(), 1, "pretrain");
    ok(&[
        "sweep", "--config", p(&cfg), "--p-time", "0.2,0.5,0.8", "--p-lead", "0.0,0.2,0.4", "--finetune-epochs", "1",
    ]);
    let csv = std::fs::read_to_string(dir.path().join("out_pretrain/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("p_time,p_lead,final_l_rec,final_l_con,acc,macro_f1,macro_auroc"));
    let cells: Vec<(f64, f64)> = lines
        .map(|l| {
            let mut f = l.split(',').map(|v| v.parse::<f64>().unwrap());
            (f.next().unwrap(), f.next().unwrap())
        })
        .collect();
    let want: Vec<(f64, f64)> = [0.2, 0.5, 0.8].iter().flat_map(|&t| [0.0, 0.2, 0.4].map(|l| (t, l))).collect();
    assert_eq!(cells, want);
}
