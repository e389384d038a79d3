//! Joint masked-reconstruction and contrastive pretraining.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{FdaConfig, TrainConfig};
use super::data::PatchCache;
use super::optim::{lr_at, AdamW};
use super::NdjsonWriter;
use crate::error::{Error, Result};
use crate::fda;
use crate::model::params::{self, FDA_IMPORTANCE};
use crate::model::{full_input, Bound, Model, ModelConfig, ParamStore, TokenInput};
use crate::objectives::{infonce, masked_sse, LossReport};
use crate::seed;
use crate::stdm::{sample_mask, uniform_random_mask, MaskPlan, Role, StdmParams};
use crate::tensor::checkpoint::{config_hash, Checkpoint};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub(crate) const PURPOSE_CROP: u64 = 1;
pub(crate) const PURPOSE_MASK: u64 = 2;
pub(crate) const PURPOSE_NOISE: u64 = 3;
pub(crate) const PURPOSE_SHUFFLE: u64 = 4;
const MAX_MASK_DRAWS: u64 = 64;

/// Everything that shapes a pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSetup {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stdm: StdmParams,
    pub fda: FdaConfig,
}

impl PretrainSetup {
    pub fn validate(&self, n_leads: usize) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.stdm.validate(n_leads)
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

/// One sample ready for the objective: patches, its mask plan and the
/// fixed FDA noise term (absent when augmentation is off).
#[derive(Debug, Clone)]
pub struct SampleInput<T> {
    pub patches: Tensor<T>,
    pub lead_ids: Vec<usize>,
    pub plan: MaskPlan,
    pub noise: Option<Tensor<T>>,
}

pub struct Objective<'g, T> {
    pub l_rec: Var<'g, T>,
    pub l_con: Var<'g, T>,
    pub total: Var<'g, T>,
    pub masked_count: usize,
}

/// Draws a plan with at least one visible and one masked cell, redrawing
/// with derived seeds otherwise.
pub fn draw_plan(c: usize, n: usize, cfg: &TrainConfig, stdm: &StdmParams, seed: u64) -> Result<MaskPlan> {
    for attempt in 0..MAX_MASK_DRAWS {
        let s = if attempt == 0 { seed } else { seed::derive(&[seed, attempt]) };
        let plan = if cfg.stdm_enabled { sample_mask(c, n, stdm, s)? } else { uniform_random_mask(c, n, cfg.uniform_mask_ratio, s)? };
        if plan.count(Role::Visible) > 0 && plan.count(Role::Masked) > 0 {
            return Ok(plan);
        }
    }
    Err(Error::EmptyVisibleSet)
}

/// Both losses and their weighted sum for one batch. A branch with weight
/// zero is still evaluated for logging but left out of `total`.
pub fn batch_objective<'g, T: Scalar>(
    g: &'g Graph<T>,
    model: &Model,
    p: &Bound<'g, T>,
    samples: &[SampleInput<T>],
    weights: (f64, f64),
    tau: f64,
) -> Result<Objective<'g, T>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let student: Vec<TokenInput<'g, T>> = samples
        .iter()
        .map(|s| TokenInput { patches: g.constant(s.patches.clone()), lead_ids: s.lead_ids.clone(), cells: s.plan.indices(Role::Visible) })
        .collect();
    let enc = model.encode(p, "encoder", &student)?;

    let pred = model.decode_time(p, &enc, &student)?;
    let pl = model.cfg.patch_len;
    let mut rows = Vec::new();
    let mut target = Vec::new();
    for (s, seg) in samples.iter().zip(&pred.segments) {
        for cell in s.plan.indices(Role::Masked) {
            rows.push(seg.start + cell);
            target.extend_from_slice(&s.patches.data()[cell * pl..(cell + 1) * pl]);
        }
    }
    let masked_count = rows.len();
    let l_rec = masked_sse(pred.x, &Tensor::new(vec![masked_count, pl], target)?, rows)?;

    let h_s = model.project(p, "projection", model.decode_latent_global(p, &enc, &student)?)?;
    let teacher = samples
        .iter()
        .map(|s| {
            let x = g.constant(s.patches.clone());
            let patches = match &s.noise {
                Some(noise) => {
                    let sh = s.patches.shape();
                    let flat = x.reshape(&[sh[0], sh[1] * sh[2]])?;
                    fda::modulate(flat, p.get(FDA_IMPORTANCE)?, noise)?.reshape(sh)?
                }
                None => x,
            };
            Ok(full_input(patches, s.lead_ids.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let h_t = model.teacher_forward(p, &teacher)?;
    let l_con = infonce(h_s, h_t, tau)?;

    let (alpha, beta) = weights;
    let total = match (alpha == 0.0, beta == 0.0) {
        (false, false) => l_rec.scale(alpha)?.add(l_con.scale(beta)?)?,
        (false, true) => l_rec.scale(alpha)?,
        (true, false) => l_con.scale(beta)?,
        (true, true) => return Err(Error::Config("both objectives have zero weight".into())),
    };
    Ok(Objective { l_rec, l_con, total, masked_count })
}

/// Parameters and optimizer of a pretraining run.
pub struct PretrainState {
    pub model: Model,
    pub params: ParamStore<f32>,
    pub opt: AdamW<f32>,
}

pub struct StepOutcome {
    pub report: LossReport,
    pub grads: Vec<(String, Tensor<f32>)>,
}

impl PretrainState {
    pub fn new(setup: &PretrainSetup, n_leads: usize) -> Result<Self> {
        let model = Model::new(setup.model.clone())?;
        let t = setup.model.n_patches * setup.model.patch_len;
        let params = params::init_pretrain(&setup.model, n_leads, fda::bins(t), setup.train.seed);
        let tc = &setup.train;
        Ok(Self { model, params, opt: AdamW::new(tc.adam_beta1, tc.adam_beta2, tc.adam_eps, tc.weight_decay) })
    }

    /// Forward, backward, AdamW on student and FDA weights, then EMA.
    pub fn step(&mut self, samples: &[SampleInput<f32>], train: &TrainConfig, lr: f64) -> Result<StepOutcome> {
        let g = Graph::new();
        let fda_on = train.fda_enabled;
        let p = Bound::bind(&g, &self.params, |n| !params::is_teacher(n) && (fda_on || n != FDA_IMPORTANCE));
        let obj = batch_objective(&g, &self.model, &p, samples, train.loss_weights(), train.tau)?;
        let report = LossReport {
            l_rec: obj.l_rec.value().item().as_f64(),
            l_con: obj.l_con.value().item().as_f64(),
            total: obj.total.value().item().as_f64(),
            masked_count: obj.masked_count,
            batch_size: samples.len(),
        };
        if !report.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, batch: 0, detail: format!("{report:?}") });
        }
        let grads = g.backward(obj.total)?;
        let mut named = Vec::new();
        for name in p.trainable() {
            if let Some(t) = grads.get(p.get(name)?) {
                named.push((name.clone(), t.clone()));
            }
        }
        self.opt.step(&mut self.params, &named, lr)?;
        params::ema_update(&mut self.params, train.ema_momentum)?;
        Ok(StepOutcome { report, grads: named })
    }
}

/// Builds the inputs of one batch; samples are prepared in parallel and
/// depend only on their own derived seeds.
pub fn prepare_batch(
    cache: &PatchCache,
    indices: &[usize],
    epoch: usize,
    setup: &PretrainSetup,
    fda_weights: &Tensor<f32>,
) -> Result<Vec<SampleInput<f32>>> {
    let lead_ids = cache.lead_ids();
    let (n, _) = cache.patch_grid();
    let train = &setup.train;
    indices
        .par_iter()
        .map(|&i| {
            let item = &cache.items[i];
            let key = format!("{}#{}", item.record_id, item.window_index);
            let patches = cache.train_patches(i, seed::sample_seed(train.seed, epoch, &key, PURPOSE_CROP))?;
            let plan = draw_plan(cache.n_leads(), n, train, &setup.stdm, seed::sample_seed(train.seed, epoch, &key, PURPOSE_MASK))?;
            let noise = if train.fda_enabled {
                let s = seed::sample_seed(train.seed, epoch, &key, PURPOSE_NOISE);
                Some(fda::noise_term(fda_weights, setup.fda.epsilon, s)?.0)
            } else {
                None
            };
            Ok(SampleInput { patches, lead_ids: lead_ids.clone(), plan, noise })
        })
        .collect()
}

/// Seeded order of `indices` for one epoch.
pub(crate) fn epoch_order(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(&[seed, epoch as u64, PURPOSE_SHUFFLE])));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub l_rec: f64,
    pub l_con: f64,
    pub total: f64,
}

/// Batch-mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub report: LossReport,
}

#[derive(Debug)]
pub struct PretrainResult {
    pub params: ParamStore<f32>,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("pretrain_epoch_{epoch:03}.ckpt"))
}

pub fn pretrain_checkpoint(setup: &PretrainSetup, params: &ParamStore<f32>, step: u64, epoch: usize) -> Result<Checkpoint> {
    let mut ck = params.to_checkpoint(&setup.hash()?, step);
    ck.metadata = serde_json::json!({ "kind": "pretrain", "epoch": epoch, "setup": setup });
    Ok(ck)
}

/// Pretrains on the training split of `cache`. With `out_dir`, writes a
/// checkpoint per epoch plus `pretrain_steps.ndjson` and
/// `pretrain_epochs.ndjson`.
pub fn pretrain(setup: &PretrainSetup, cache: &PatchCache, out_dir: Option<&Path>) -> Result<PretrainResult> {
    setup.validate(cache.n_leads())?;
    let (n, pl) = cache.patch_grid();
    if n != setup.model.n_patches || pl != setup.model.patch_len {
        return Err(Error::DimensionMismatch {
            context: "pretrain".into(),
            detail: format!("cache grid {n}x{pl}, model expects {}x{}", setup.model.n_patches, setup.model.patch_len),
        });
    }
    let train_idx = cache.indices(crate::signal::manifest::Split::Train);
    if train_idx.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let tc = &setup.train;
    let per_epoch = train_idx.len().div_ceil(tc.batch_size);
    let total_steps = per_epoch * tc.epochs;
    let warmup = per_epoch * tc.warmup_epochs;
    let mut state = PretrainState::new(setup, cache.n_leads())?;
    let mut step_log = out_dir.map(|d| NdjsonWriter::create(&d.join("pretrain_steps.ndjson"))).transpose()?;
    let mut epoch_log = out_dir.map(|d| NdjsonWriter::create(&d.join("pretrain_epochs.ndjson"))).transpose()?;
    let mut result = PretrainResult { params: ParamStore::new(), steps: Vec::new(), epochs: Vec::new(), checkpoints: Vec::new() };
    let mut step = 0;
    for epoch in 1..=tc.epochs {
        let order = epoch_order(&train_idx, tc.seed, epoch);
        let mut sums = [0.0f64; 3];
        let (mut masked, mut seen) = (0, 0);
        for (batch, chunk) in order.chunks(tc.batch_size).enumerate() {
            let lr = lr_at(step, total_steps, warmup, tc.lr)?;
            let samples = prepare_batch(cache, chunk, epoch, setup, state.params.get(FDA_IMPORTANCE)?)?;
            let outcome = state.step(&samples, tc, lr).map_err(|e| match e {
                Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { epoch, batch, detail },
                other => other,
            })?;
            let r = outcome.report;
            let entry = StepLog { step, epoch, lr, l_rec: r.l_rec, l_con: r.l_con, total: r.total };
            if let Some(w) = step_log.as_mut() {
                w.write(&entry)?;
            }
            result.steps.push(entry);
            for (s, v) in sums.iter_mut().zip([r.l_rec, r.l_con, r.total]) {
                *s += v;
            }
            masked += r.masked_count;
            seen += r.batch_size;
            step += 1;
        }
        let report = LossReport {
            l_rec: sums[0] / per_epoch as f64,
            l_con: sums[1] / per_epoch as f64,
            total: sums[2] / per_epoch as f64,
            masked_count: masked,
            batch_size: seen,
        };
        log::info!("pretrain epoch {epoch}: l_rec {:.4} l_con {:.4} total {:.4}", report.l_rec, report.l_con, report.total);
        let entry = EpochLog { epoch, report };
        if let Some(w) = epoch_log.as_mut() {
            w.write(&entry)?;
        }
        result.epochs.push(entry);
        if let Some(dir) = out_dir {
            let path = checkpoint_path(dir, epoch);
            pretrain_checkpoint(setup, &state.params, step as u64, epoch)?.save(&path)?;
            result.checkpoints.push(path);
        }
    }
    result.params = state.params;
    Ok(result)
}
