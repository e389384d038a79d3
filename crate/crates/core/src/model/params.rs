//! Named parameter storage, initialization, graph binding and EMA.
//!
//! Parameter names are stable strings used as checkpoint keys:
//!
//! | prefix | contents |
//! |---|---|
//! | `encoder.` | `patch_embed.{weight,bias}`, `lead_embed`, `blocks.{i}.*`, `norm.*` |
//! | `time_decoder.` | `mask_token`, `lead_embed`, `blocks.{i}.*`, `norm.*`, `head.{weight,bias}` |
//! | `latent_decoder.` | `mask_token`, `lead_embed`, `blocks.{i}.*`, `norm.*` |
//! | `projection.` | `fc1.{weight,bias}`, `fc2.{weight,bias}` |
//! | `teacher.` | copies of `encoder.*` and `projection.*` |
//! | `fda.importance` | `[C, K]` frequency weights |
//! | `classifier.` | `weight`, `bias` |
//!
//! A transformer block `blocks.{i}` holds `norm1.{gamma,beta}`,
//! `attn.qkv.{weight,bias}`, `attn.out.{weight,bias}`, `norm2.{gamma,beta}`,
//! `mlp.fc1.{weight,bias}` and `mlp.fc2.{weight,bias}`.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub const TEACHER_PREFIX: &str = "teacher.";
pub const FDA_IMPORTANCE: &str = "fda.importance";

/// Student parameter groups mirrored by the teacher.
pub const MIRRORED: [&str; 2] = ["encoder.", "projection."];

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { map: BTreeMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.map.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.map.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.map.len() == other.map.len()
            && self.map.iter().zip(&other.map).all(|((ka, va), (kb, vb))| ka == kb && va.bitwise_eq(vb))
    }

    pub fn to_checkpoint(&self, config_hash: &str, step: u64) -> Checkpoint {
        let mut ck = Checkpoint::new(config_hash, step);
        for (name, t) in &self.map {
            ck.insert(name.clone(), t);
        }
        ck
    }

    /// Overwrites every parameter of `self` whose name starts with one of
    /// `prefixes` from `ck`, checking shapes.
    pub fn load_from(&mut self, ck: &Checkpoint, prefixes: &[&str]) -> Result<usize> {
        let mut loaded = 0;
        for (name, t) in self.map.iter_mut() {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                *t = ck.get_shaped(name, t.shape())?;
                loaded += 1;
            }
        }
        Ok(loaded)
    }

    /// Every parameter stored in `ck`, unchecked.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut store = Self::new();
        for name in ck.names() {
            store.insert(name, ck.get(name)?);
        }
        Ok(store)
    }
}

pub fn teacher_name(student: &str) -> String {
    format!("{TEACHER_PREFIX}{student}")
}

pub fn is_teacher(name: &str) -> bool {
    name.starts_with(TEACHER_PREFIX)
}

/// `teacher ← m·teacher + (1−m)·student` for every mirrored parameter.
/// `m = 1` leaves the teacher untouched and `m = 0` copies the student,
/// both bit for bit.
pub fn ema_update<T: Scalar>(store: &mut ParamStore<T>, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::ParamRange(format!("EMA momentum {m} outside [0, 1]")));
    }
    if m == 1.0 {
        return Ok(());
    }
    let students: Vec<String> =
        store.names().filter(|n| MIRRORED.iter().any(|p| n.starts_with(p))).map(str::to_string).collect();
    let (mt, ms) = (T::lit(m), T::lit(1.0 - m));
    for name in students {
        let student = store.get(&name)?.clone();
        let teacher = store.get_mut(&teacher_name(&name))?;
        if teacher.shape() != student.shape() {
            return Err(Error::CheckpointShape {
                name: teacher_name(&name),
                expected: student.shape().to_vec(),
                found: teacher.shape().to_vec(),
            });
        }
        if m == 0.0 {
            *teacher = student;
            continue;
        }
        for (t, &s) in teacher.data_mut().iter_mut().zip(student.data()) {
            *t = mt * *t + ms * s;
        }
    }
    Ok(())
}

/// Copies every student encoder/projection parameter into the teacher slots.
pub fn sync_teacher<T: Scalar>(store: &mut ParamStore<T>) -> Result<()> {
    ema_update(store, 0.0)
}

fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed::derive(&[seed, seed::hash_str(name)]))
}

fn xavier<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect())
}

fn normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let d = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| T::lit(d.sample(rng))).collect())
}

struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    seed: u64,
}

impl<T: Scalar> Init<'_, T> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) {
        let w = format!("{name}.weight");
        let mut rng = rng_for(self.seed, &w);
        self.store.insert(w, xavier(&[fan_in, fan_out], fan_in, fan_out, &mut rng));
        self.store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
    }

    fn norm(&mut self, name: &str, dim: usize) {
        self.store.insert(format!("{name}.gamma"), Tensor::ones(&[dim]));
        self.store.insert(format!("{name}.beta"), Tensor::zeros(&[dim]));
    }

    fn normal(&mut self, name: &str, shape: &[usize], std: f64) {
        let mut rng = rng_for(self.seed, name);
        self.store.insert(name, normal(shape, std, &mut rng));
    }

    fn blocks(&mut self, prefix: &str, layers: usize, dim: usize) {
        for i in 0..layers {
            let b = format!("{prefix}.blocks.{i}");
            self.norm(&format!("{b}.norm1"), dim);
            self.linear(&format!("{b}.attn.qkv"), dim, 3 * dim);
            self.linear(&format!("{b}.attn.out"), dim, dim);
            self.norm(&format!("{b}.norm2"), dim);
            self.linear(&format!("{b}.mlp.fc1"), dim, super::MLP_RATIO * dim);
            self.linear(&format!("{b}.mlp.fc2"), super::MLP_RATIO * dim, dim);
        }
        self.norm(&format!("{prefix}.norm"), dim);
    }
}

/// Encoder parameters under `prefix`.
fn init_encoder<T: Scalar>(init: &mut Init<'_, T>, cfg: &ModelConfig, prefix: &str) {
    let w = format!("{prefix}.patch_embed.weight");
    let mut rng = rng_for(init.seed, &w);
    init.store.insert(w, xavier(&[cfg.dim, 1, cfg.patch_len], cfg.patch_len, cfg.dim, &mut rng));
    init.store.insert(format!("{prefix}.patch_embed.bias"), Tensor::zeros(&[cfg.dim]));
    init.normal(&format!("{prefix}.lead_embed"), &[cfg.n_leads, cfg.dim], 0.02);
    init.blocks(prefix, cfg.enc_layers, cfg.dim);
}

/// Full pretraining parameter set: student, teacher copy and FDA weights
/// for `fda_leads × fda_bins`.
pub fn init_pretrain<T: Scalar>(cfg: &ModelConfig, fda_leads: usize, fda_bins: usize, seed: u64) -> ParamStore<T> {
    let mut store = ParamStore::new();
    let mut init = Init { store: &mut store, seed };
    init_encoder(&mut init, cfg, "encoder");
    for (dec, layers) in [("time_decoder", cfg.time_dec_layers), ("latent_decoder", cfg.latent_dec_layers)] {
        init.normal(&format!("{dec}.mask_token"), &[cfg.dim], 0.02);
        init.normal(&format!("{dec}.lead_embed"), &[cfg.n_leads, cfg.dim], 0.02);
        init.blocks(dec, layers, cfg.dim);
    }
    init.linear("time_decoder.head", cfg.dim, cfg.patch_len);
    init.linear("projection.fc1", cfg.dim, cfg.proj_hidden);
    init.linear("projection.fc2", cfg.proj_hidden, cfg.proj_out);
    store.insert(FDA_IMPORTANCE, Tensor::zeros(&[fda_leads, fda_bins]));
    let mirrored: Vec<(String, Tensor<T>)> = store
        .iter()
        .filter(|(n, _)| MIRRORED.iter().any(|p| n.starts_with(p)))
        .map(|(n, t)| (teacher_name(n), t.clone()))
        .collect();
    for (n, t) in mirrored {
        store.insert(n, t);
    }
    store
}

/// Encoder plus a fresh linear classifier.
pub fn init_classifier<T: Scalar>(cfg: &ModelConfig, n_classes: usize, seed: u64) -> ParamStore<T> {
    let mut store = ParamStore::new();
    let mut init = Init { store: &mut store, seed };
    init_encoder(&mut init, cfg, "encoder");
    init.linear("classifier", cfg.dim, n_classes);
    store
}

/// Parameters of a [`ParamStore`] entered into one graph. Trainable ones are
/// gradient leaves; the rest are constants.
pub struct Bound<'g, T> {
    vars: HashMap<String, Var<'g, T>>,
    trainable: Vec<String>,
}

impl<'g, T: Scalar> Bound<'g, T> {
    pub fn bind(graph: &'g Graph<T>, store: &ParamStore<T>, trainable: impl Fn(&str) -> bool) -> Self {
        let mut vars = HashMap::with_capacity(store.len());
        let mut names = Vec::new();
        for (name, t) in store.iter() {
            let train = trainable(name);
            vars.insert(name.to_string(), graph.leaf(t.clone(), train));
            if train {
                names.push(name.to_string());
            }
        }
        Self { vars, trainable: names }
    }

    pub fn get(&self, name: &str) -> Result<Var<'g, T>> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn trainable(&self) -> &[String] {
        &self.trainable
    }
}
