use std::fmt::Write as _;
use std::path::Path;

use ecgssl::fda::{self, importance_map, noise_term};
use ecgssl::model::{Model, ModelConfig, ParamStore};
use ecgssl::signal::format::{read_record, write_record, RecordFormat};
use ecgssl::signal::manifest::Split;
use ecgssl::signal::synth::{generate_synthetic, record_file_name, synth_record, SynthParams};
use ecgssl::signal::EcgRecord;
use ecgssl::stdm::{sample_mask, uniform_random_mask, StdmParams};
use ecgssl::tensor::checkpoint::Checkpoint;
use ecgssl::tensor::gradcheck::{all_primitives, default_shapes, grad_check};
use ecgssl::tensor::Tensor;
use ecgssl::train::finetune::resolve_leads;
use ecgssl::train::{self, PatchCache, Phase, TrainConfig};
use ecgssl::{Error, ErrorCategory, Result};
use serde::Serialize;

use crate::config::RunConfig;

/// A failed command: a library error, or a run that completed with failures.
#[derive(Debug)]
pub enum CmdError {
    Lib(Error),
    /// Some inputs could not be processed.
    PartialData(String),
    /// A numerical verification did not meet its tolerance.
    CheckFailed(String),
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::Lib(e)
    }
}

impl From<serde_json::Error> for CmdError {
    fn from(e: serde_json::Error) -> Self {
        CmdError::Lib(e.into())
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Lib(e) => e.fmt(f),
            CmdError::PartialData(m) | CmdError::CheckFailed(m) => f.write_str(m),
        }
    }
}

impl CmdError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            CmdError::Lib(e) => e.category(),
            CmdError::PartialData(_) => ErrorCategory::Data,
            CmdError::CheckFailed(_) => ErrorCategory::Numeric,
        }
    }
}

pub type CmdResult = std::result::Result<(), CmdError>;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn print_json<S: Serialize>(value: &S) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

pub fn gen(n: usize, seed: u64, out: &Path, class_mix: Vec<f64>, fs: f64, duration_s: f64) -> CmdResult {
    let set = generate_synthetic(&SynthParams { n_records: n, fs, duration_s, class_mix, seed })?;
    create_dir(out)?;
    for rec in &set.records {
        write_record(rec, &out.join(record_file_name(&rec.record_id)), RecordFormat::Cecg)?;
    }
    set.manifest.save(&out.join("manifest.json"))?;
    write_file(&out.join("generation_log.json"), serde_json::to_vec_pretty(&set.log)?)?;
    log::info!("wrote {} records to {}", set.records.len(), out.display());
    Ok(())
}

pub fn preprocess(manifest: &Path, out: &Path, csv_fs: f64) -> CmdResult {
    let (cache, failures) = PatchCache::from_manifest(manifest, csv_fs)?;
    for f in &failures {
        log::warn!("skipped record {}: {}", f.record_id, f.error);
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    cache.save(out)?;
    let (n, patch_len) = cache.patch_grid();
    log::info!("cached {} windows of shape [{}, {n}, {patch_len}] to {}", cache.len(), cache.n_leads(), out.display());
    if !failures.is_empty() {
        return Err(CmdError::PartialData(format!("{} of the listed records failed preprocessing", failures.len())));
    }
    Ok(())
}

fn save_resolved_config(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("config.json"), serde_json::to_vec_pretty(cfg)?)
}

pub fn pretrain(config: &Path) -> CmdResult {
    let cfg = RunConfig::load(config)?;
    let cache = cfg.load_cache()?;
    save_resolved_config(&cfg)?;
    let result = train::pretrain(&cfg.pretrain_setup(), &cache, Some(&cfg.output_dir))?;
    if let Some(last) = result.epochs.last() {
        print_json(last)?;
    }
    Ok(())
}

pub fn finetune(config: &Path, checkpoint: Option<&Path>) -> CmdResult {
    let cfg = RunConfig::load(config)?;
    let pretrained = checkpoint.map(Checkpoint::load).transpose()?;
    let cache = cfg.load_cache()?;
    save_resolved_config(&cfg)?;
    let result = train::finetune(&cfg.model, &cfg.train, pretrained.as_ref(), &cache, Some(&cfg.output_dir))?;
    if let Some(test) = result.test {
        print_json(&test)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    split: Split,
    n: usize,
    #[serde(flatten)]
    metrics: ecgssl::objectives::Metrics,
}

pub fn eval(config: &Path, checkpoint: &Path, split: Split) -> CmdResult {
    let cfg = RunConfig::load(config)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model_cfg: ModelConfig = match ck.metadata.get("model") {
        Some(m) => serde_json::from_value(m.clone())?,
        None => cfg.model.clone(),
    };
    let lead_names: Option<Vec<String>> = match ck.metadata.get("leads") {
        Some(l) => serde_json::from_value(l.clone())?,
        None => cfg.train.leads.clone(),
    };
    let cache = cfg.load_cache()?;
    if let Some(names) = ck.metadata.get("class_names") {
        let names: Vec<String> = serde_json::from_value(names.clone())?;
        if names != cache.class_names {
            return Err(Error::DimensionMismatch {
                context: checkpoint.display().to_string(),
                detail: format!("classes {names:?}, data has {:?}", cache.class_names),
            }
            .into());
        }
    }
    let leads = resolve_leads(&cache, lead_names.as_deref())?;
    let params = ParamStore::<f32>::from_checkpoint(&ck)?;
    let model = Model::new(model_cfg)?;
    let metrics = train::evaluate(&model, &params, &cache, split, &leads, cfg.train.batch_size)?;
    Ok(print_json(&EvalReport { split, n: cache.indices(split).len(), metrics })?)
}

pub fn sweep(
    config: &Path,
    p_times: &[f64],
    p_leads: &[f64],
    finetune_epochs: usize,
    finetune_lr: f64,
    out: Option<&Path>,
) -> CmdResult {
    let cfg = RunConfig::load(config)?;
    let cache = cfg.load_cache()?;
    let ft = TrainConfig {
        phase: Phase::Finetune,
        epochs: finetune_epochs,
        lr: finetune_lr,
        batch_size: cfg.train.batch_size,
        seed: cfg.train.seed,
        leads: cfg.train.leads.clone(),
        ..TrainConfig::finetune()
    };
    ft.validate()?;
    save_resolved_config(&cfg)?;
    let rows = train::sweep_masks(&cfg.pretrain_setup(), &ft, &cache, p_times, p_leads, Some(&cfg.output_dir))?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
    train::write_sweep_csv(&rows, &path)?;
    log::info!("wrote {} sweep rows to {}", rows.len(), path.display());
    Ok(())
}

pub fn augment(
    input: Option<&Path>,
    seed: u64,
    checkpoint: Option<&Path>,
    epsilon: f64,
    csv_fs: f64,
    out: &Path,
) -> CmdResult {
    let rec = match input {
        Some(path) => read_record(path, RecordFormat::from_path(path, csv_fs))?,
        None => synth_record("demo", 0, 250.0, 9.0, seed).0,
    };
    let (c, t) = (rec.n_leads(), rec.len());
    let k = fda::bins(t);
    let w = match checkpoint {
        Some(path) => Checkpoint::load(path)?.get_shaped::<f64>(ecgssl::model::params::FDA_IMPORTANCE, &[c, k])?,
        None => Tensor::zeros(&[c, k]),
    };
    let x = Tensor::new(vec![c, t], rec.samples.iter().map(|&v| v as f64).collect())?;
    let y = fda::augment(&x, &w, epsilon, seed, t)?;
    let augmented = EcgRecord::new(
        format!("{}_aug", rec.record_id),
        rec.leads.clone(),
        rec.fs,
        y.data().iter().map(|&v| v as f32).collect(),
        rec.label.clone(),
    )?;
    create_dir(out)?;
    write_record(&augmented, &out.join("augmented.cecg"), RecordFormat::Cecg)?;
    write_record(&augmented, &out.join("augmented.csv"), RecordFormat::Csv { fs: rec.fs })?;

    let a = importance_map(&w);
    let (_, scale) = noise_term(&w, epsilon, seed)?;
    let mut csv = String::from("lead,bin,importance,lambda,gated\n");
    for lead in 0..c {
        for bin in 0..k {
            let i = lead * k + bin;
            let ai = a.data()[i];
            let gated = ai >= scale.threshold[lead];
            writeln!(csv, "{},{bin},{ai},{},{}", rec.leads[lead], scale.lambda[i], gated as u8).expect("write to string");
        }
    }
    write_file(&out.join("spectrum.csv"), csv)?;
    log::info!("wrote augmented record and spectrum dump to {}", out.display());
    Ok(())
}

fn grid_csv(cells: &[u8], n: usize) -> String {
    let mut s = String::with_capacity(cells.len() * 2);
    for row in cells.chunks(n) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

#[allow(clippy::too_many_arguments)]
pub fn mask(
    c: usize,
    n: usize,
    seed: u64,
    p_time: f64,
    p_lead: f64,
    k: Option<usize>,
    uniform: Option<f64>,
    out: &Path,
) -> CmdResult {
    let plan = match uniform {
        Some(ratio) => uniform_random_mask(c, n, ratio, seed)?,
        None => sample_mask(c, n, &StdmParams { p_time, p_lead, k: k.unwrap_or(c.min(4)) }, seed)?,
    };
    create_dir(out)?;
    write_file(&out.join("visible.csv"), grid_csv(&plan.visible(), n))?;
    write_file(&out.join("masked.csv"), grid_csv(&plan.masked(), n))?;
    write_file(&out.join("dropped.csv"), grid_csv(&plan.dropped(), n))?;
    let count = |v: Vec<u8>| v.iter().map(|&x| x as usize).sum::<usize>();
    Ok(print_json(&serde_json::json!({
        "leads": c,
        "patches": n,
        "visible": count(plan.visible()),
        "masked": count(plan.masked()),
        "dropped": count(plan.dropped()),
    }))?)
}

pub fn gradcheck(seeds: u64, tol: f64) -> CmdResult {
    let mut failed = Vec::new();
    for prim in all_primitives() {
        let shapes = default_shapes(&prim);
        for seed in 0..seeds {
            let report = grad_check(&prim, &shapes, tol, seed)?;
            print_json(&report)?;
            if !report.pass {
                failed.push(format!("{} (seed {seed})", report.primitive));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CmdError::CheckFailed(format!("gradient check failed for {}", failed.join(", "))))
    }
}
