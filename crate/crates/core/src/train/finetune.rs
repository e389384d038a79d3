//! Supervised fine-tuning of the encoder with a linear head.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::PatchCache;
use super::optim::{lr_at, AdamW};
use super::pretrain::{epoch_order, PURPOSE_CROP};
use super::NdjsonWriter;
use crate::error::{Error, Result};
use crate::model::{full_input, params, Bound, Model, ModelConfig, ParamStore};
use crate::objectives::{binary_cross_entropy, cross_entropy, metrics, Metrics};
use crate::seed;
use crate::signal::manifest::Split;
use crate::signal::standard_lead_index;
use crate::tensor::checkpoint::{config_hash, Checkpoint};
use crate::tensor::{Graph, Tensor};

const PURPOSE_SUBSET: u64 = 10;
const PURPOSE_HEAD: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug)]
pub struct FinetuneResult {
    /// Parameters of the best validation epoch.
    pub params: ParamStore<f32>,
    pub history: Vec<MetricsRecord>,
    pub best_epoch: usize,
    pub test: Option<MetricsRecord>,
}

/// Positions in `cache.leads` of the configured lead subset.
pub fn resolve_leads(cache: &PatchCache, leads: Option<&[String]>) -> Result<Vec<usize>> {
    let Some(names) = leads else {
        return Ok((0..cache.n_leads()).collect());
    };
    names
        .iter()
        .map(|name| {
            cache
                .leads
                .iter()
                .position(|l| l == name || (standard_lead_index(l).is_some() && standard_lead_index(l) == standard_lead_index(name)))
                .ok_or_else(|| Error::Config(format!("lead {name:?} not in cached leads {:?}", cache.leads)))
        })
        .collect()
}

fn select_leads(x: &Tensor<f32>, rows: &[usize]) -> Tensor<f32> {
    let s = x.shape();
    let size = s[1] * s[2];
    let mut out = Vec::with_capacity(rows.len() * size);
    for &r in rows {
        out.extend_from_slice(&x.data()[r * size..(r + 1) * size]);
    }
    Tensor::new(vec![rows.len(), s[1], s[2]], out).expect("lead subset")
}

/// Class probabilities (softmax or per-label sigmoid) for the given items,
/// using their cached evaluation crops. Returns `(probs, labels)`, both
/// `len × n_classes` row-major.
pub fn predict(
    model: &Model,
    params: &ParamStore<f32>,
    cache: &PatchCache,
    indices: &[usize],
    leads: &[usize],
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let all_ids = cache.lead_ids();
    let lead_ids: Vec<usize> = leads.iter().map(|&l| all_ids[l]).collect();
    let (mut probs, mut labels) = (Vec::new(), Vec::new());
    for chunk in indices.chunks(batch_size.max(1)) {
        let g = Graph::new();
        let p = Bound::bind(&g, params, |_| false);
        let inputs: Vec<_> = chunk
            .iter()
            .map(|&i| full_input(g.constant(select_leads(&cache.eval_patches(i), leads)), lead_ids.clone()))
            .collect();
        let logits = model.classify(&p, &inputs)?;
        let out = if cache.multilabel { logits.sigmoid()? } else { logits.softmax()? };
        probs.extend(out.value().to_f64_vec());
        for &i in chunk {
            labels.extend_from_slice(&cache.items[i].label);
        }
    }
    Ok((probs, labels))
}

pub fn evaluate(
    model: &Model,
    params: &ParamStore<f32>,
    cache: &PatchCache,
    split: Split,
    leads: &[usize],
    batch_size: usize,
) -> Result<Metrics> {
    let idx = cache.indices(split);
    let (probs, labels) = predict(model, params, cache, &idx, leads, batch_size)?;
    metrics(&probs, &labels, cache.n_classes(), cache.multilabel)
}

/// Classifier parameters, with `encoder.*` taken from `pretrained` if given.
pub fn init_finetune(cfg: &ModelConfig, n_classes: usize, seed: u64, pretrained: Option<&Checkpoint>) -> Result<ParamStore<f32>> {
    let mut store = params::init_classifier(cfg, n_classes, seed::derive(&[seed, PURPOSE_HEAD]));
    if let Some(ck) = pretrained {
        store.load_from(ck, &["encoder."])?;
    }
    Ok(store)
}

/// Fine-tunes on the training split, selects the best validation epoch by
/// accuracy (earliest on ties) and reports test metrics for it. With
/// `out_dir`, writes `finetune_metrics.ndjson` and `finetune_best.ckpt`.
pub fn finetune(
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    pretrained: Option<&Checkpoint>,
    cache: &PatchCache,
    out_dir: Option<&Path>,
) -> Result<FinetuneResult> {
    model_cfg.validate()?;
    tc.validate()?;
    let model = Model::new(model_cfg.clone())?;
    let leads = resolve_leads(cache, tc.leads.as_deref())?;
    let all_ids = cache.lead_ids();
    let lead_ids: Vec<usize> = leads.iter().map(|&l| all_ids[l]).collect();
    let mut params = init_finetune(model_cfg, cache.n_classes(), tc.seed, pretrained)?;

    let mut train_idx = cache.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    if tc.data_ratio < 1.0 {
        train_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(&[tc.seed, PURPOSE_SUBSET])));
        let keep = ((train_idx.len() as f64 * tc.data_ratio).round() as usize).max(1);
        train_idx.truncate(keep);
        train_idx.sort_unstable();
    }
    let has_val = !cache.indices(Split::Val).is_empty();
    let per_epoch = train_idx.len().div_ceil(tc.batch_size);
    let total_steps = per_epoch * tc.epochs;
    let warmup = per_epoch * tc.warmup_epochs;
    let mut opt = AdamW::new(tc.adam_beta1, tc.adam_beta2, tc.adam_eps, tc.weight_decay);
    let mut log = out_dir.map(|d| NdjsonWriter::create(&d.join("finetune_metrics.ndjson"))).transpose()?;
    let mut history = Vec::new();
    let (mut best, mut best_epoch, mut best_acc) = (params.clone(), 0, f64::NEG_INFINITY);
    let mut step = 0;
    for epoch in 1..=tc.epochs {
        for (batch, chunk) in epoch_order(&train_idx, tc.seed, epoch).chunks(tc.batch_size).enumerate() {
            let lr = lr_at(step, total_steps, warmup, tc.lr)?;
            let patches = chunk
                .par_iter()
                .map(|&i| {
                    let it = &cache.items[i];
                    let key = format!("{}#{}", it.record_id, it.window_index);
                    Ok(select_leads(&cache.train_patches(i, seed::sample_seed(tc.seed, epoch, &key, PURPOSE_CROP))?, &leads))
                })
                .collect::<Result<Vec<_>>>()?;
            let g = Graph::new();
            let p = Bound::bind(&g, &params, |_| true);
            let inputs: Vec<_> = patches.into_iter().map(|x| full_input(g.constant(x), lead_ids.clone())).collect();
            let logits = model.classify(&p, &inputs)?;
            let loss = if cache.multilabel {
                let y: Vec<f32> = chunk.iter().flat_map(|&i| cache.items[i].label.iter().map(|&v| v as f32)).collect();
                binary_cross_entropy(logits, &Tensor::new(vec![chunk.len(), cache.n_classes()], y)?)?
            } else {
                let y: Vec<usize> =
                    chunk.iter().map(|&i| cache.items[i].label.iter().position(|&v| v == 1).unwrap_or(0)).collect();
                cross_entropy(logits, &y)?
            };
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch, detail: format!("classification loss {value}") });
            }
            let grads = g.backward(loss)?;
            let named: Vec<_> = p
                .trainable()
                .iter()
                .filter_map(|n| grads.get(p.get(n).ok()?).map(|t| (n.clone(), t.clone())))
                .collect();
            opt.step(&mut params, &named, lr)?;
            step += 1;
        }
        if has_val {
            let m = evaluate(&model, &params, cache, Split::Val, &leads, tc.batch_size)?;
            let rec = MetricsRecord { epoch, split: Split::Val, metrics: m };
            log::info!("finetune epoch {epoch}: val acc {:.4} macro_f1 {:.4}", m.acc, m.macro_f1);
            if let Some(w) = log.as_mut() {
                w.write(&rec)?;
            }
            history.push(rec);
            if m.acc > best_acc {
                (best, best_epoch, best_acc) = (params.clone(), epoch, m.acc);
            }
        } else {
            (best, best_epoch) = (params.clone(), epoch);
        }
    }
    let test = if cache.indices(Split::Test).is_empty() {
        None
    } else {
        let m = evaluate(&model, &best, cache, Split::Test, &leads, tc.batch_size)?;
        Some(MetricsRecord { epoch: best_epoch, split: Split::Test, metrics: m })
    };
    if let (Some(w), Some(t)) = (log.as_mut(), test.as_ref()) {
        w.write(t)?;
    }
    if let Some(dir) = out_dir {
        let mut ck = best.to_checkpoint(&config_hash(&(model_cfg, tc))?, step as u64);
        ck.metadata = serde_json::json!({
            "kind": "finetune",
            "epoch": best_epoch,
            "model": model_cfg,
            "leads": tc.leads,
            "class_names": cache.class_names,
        });
        ck.save(&dir.join("finetune_best.ckpt"))?;
    }
    Ok(FinetuneResult { params: best, history, best_epoch, test })
}
