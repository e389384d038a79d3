//! Preprocessed dataset cache.
//!
//! Every 10 s window is kept twice: filtered and resampled (`[C, 2500]`) so
//! training can draw a fresh random crop each epoch, and as the finished
//! center-crop patch tensor (`[C, N, P]`) used for evaluation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::format::{read_record, RecordFormat};
use crate::signal::manifest::{DatasetManifest, Split};
use crate::signal::pipeline::{finish_window, prepare_windows, Crop, TARGET_FS};
use crate::signal::{standard_lead_index, EcgRecord, Label};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheItem {
    pub record_id: String,
    pub split: Split,
    /// Multi-hot label (one-hot for single-label sets).
    pub label: Vec<u8>,
    pub window_index: usize,
    /// Start of the window in the resampled record.
    pub window_offset: usize,
    /// Start of the evaluation crop in the resampled record.
    pub eval_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheMeta {
    leads: Vec<String>,
    class_names: Vec<String>,
    multilabel: bool,
    items: Vec<CacheItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchCache {
    pub leads: Vec<String>,
    pub class_names: Vec<String>,
    pub multilabel: bool,
    pub items: Vec<CacheItem>,
    /// `[W, C, window_len]`
    windows: Tensor<f32>,
    /// `[W, C, N, P]`
    eval: Tensor<f32>,
}

/// A record that could not be preprocessed.
#[derive(Debug)]
pub struct Failure {
    pub record_id: String,
    pub error: Error,
}

/// One labelled record waiting for preprocessing.
pub struct Source {
    pub record: EcgRecord,
    pub split: Split,
    pub label: Label,
}

type Prepared = (Vec<CacheItem>, Vec<f32>, Vec<f32>);

fn prepare(src: &Source, n_classes: usize) -> Result<Prepared> {
    let windows = prepare_windows(&src.record)?;
    let mut items = Vec::with_capacity(windows.len());
    let (mut raw, mut eval) = (Vec::new(), Vec::new());
    for (i, w) in windows.iter().enumerate() {
        let patches = finish_window(w, false, 0)?;
        items.push(CacheItem {
            record_id: src.record.record_id.clone(),
            split: src.split,
            label: src.label.to_multi_hot(n_classes),
            window_index: i,
            window_offset: w.offset,
            eval_offset: patches.origin.crop_offset,
        });
        raw.extend_from_slice(&w.record.samples);
        eval.extend_from_slice(patches.data.data());
    }
    Ok((items, raw, eval))
}

impl PatchCache {
    /// Preprocesses records in parallel. Records that fail are reported and
    /// left out; the rest keep their input order.
    pub fn build(sources: &[Source], class_names: Vec<String>, multilabel: bool) -> Result<(Self, Vec<Failure>)> {
        let n_classes = class_names.len();
        let results: Vec<Result<Prepared>> = sources.par_iter().map(|s| prepare(s, n_classes)).collect();
        let mut failures = Vec::new();
        let mut leads: Option<Vec<String>> = None;
        let (mut items, mut windows, mut eval) = (Vec::new(), Vec::new(), Vec::new());
        for (src, res) in sources.iter().zip(results) {
            let id = src.record.record_id.clone();
            match res {
                Ok(_) if leads.as_ref().is_some_and(|l| *l != src.record.leads) => failures.push(Failure {
                    record_id: id,
                    error: Error::DimensionMismatch {
                        context: src.record.record_id.clone(),
                        detail: format!("leads {:?} differ from {:?}", src.record.leads, leads.as_ref().unwrap()),
                    },
                }),
                Ok((it, w, e)) => {
                    leads.get_or_insert_with(|| src.record.leads.clone());
                    items.extend(it);
                    windows.extend(w);
                    eval.extend(e);
                }
                Err(error) => failures.push(Failure { record_id: id, error }),
            }
        }
        let leads = leads.ok_or(Error::EmptyInput("no record survived preprocessing"))?;
        let (n, c) = (items.len(), leads.len());
        let win_len = windows.len() / (n * c);
        let cell = eval.len() / (n * c);
        let p = crate::signal::pipeline::PATCH_LEN;
        let cache = Self {
            windows: Tensor::new(vec![n, c, win_len], windows)?,
            eval: Tensor::new(vec![n, c, cell / p, p], eval)?,
            leads,
            class_names,
            multilabel,
            items,
        };
        Ok((cache, failures))
    }

    /// Reads and preprocesses every manifest entry.
    pub fn from_manifest(manifest_path: &Path, csv_fs: f64) -> Result<(Self, Vec<Failure>)> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let mut sources = Vec::new();
        let mut failures = Vec::new();
        for e in &manifest.records {
            let path = manifest.resolve(manifest_path, e);
            match read_record(&path, RecordFormat::from_path(&path, csv_fs)) {
                Ok(mut record) => {
                    record.record_id = e.record_id.clone();
                    sources.push(Source { record, split: e.split, label: e.label.clone() });
                }
                Err(error) => failures.push(Failure { record_id: e.record_id.clone(), error }),
            }
        }
        let (cache, more) = Self::build(&sources, manifest.class_names.clone(), manifest.multilabel)?;
        failures.extend(more);
        Ok((cache, failures))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_leads(&self) -> usize {
        self.leads.len()
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape()[2]
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (self.eval.shape()[2], self.eval.shape()[3])
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.items[i].split == split).collect()
    }

    /// Embedding-table rows of the cached leads (their standard position, or
    /// their order for non-standard names).
    pub fn lead_ids(&self) -> Vec<usize> {
        self.leads.iter().enumerate().map(|(i, l)| standard_lead_index(l).unwrap_or(i)).collect()
    }

    /// Cached center-crop patches of item `i`: `[C, N, P]`.
    pub fn eval_patches(&self, i: usize) -> Tensor<f32> {
        let (n, p) = self.patch_grid();
        let size = self.n_leads() * n * p;
        Tensor::new(vec![self.n_leads(), n, p], self.eval.data()[i * size..(i + 1) * size].to_vec())
            .expect("cache geometry")
    }

    /// A seeded random crop of item `i`, normalized and patched: `[C, N, P]`.
    pub fn train_patches(&self, i: usize, seed: u64) -> Result<Tensor<f32>> {
        let size = self.n_leads() * self.window_len();
        let item = &self.items[i];
        let record = EcgRecord::new(
            item.record_id.clone(),
            self.leads.clone(),
            TARGET_FS,
            self.windows.data()[i * size..(i + 1) * size].to_vec(),
            None,
        )?;
        Ok(finish_window(&Crop { record, offset: item.window_offset }, true, seed)?.data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CacheMeta {
            leads: self.leads.clone(),
            class_names: self.class_names.clone(),
            multilabel: self.multilabel,
            items: self.items.clone(),
        };
        let mut ck = Checkpoint::new("", 0);
        ck.metadata = serde_json::to_value(meta)?;
        ck.insert("windows", &self.windows);
        ck.insert("eval", &self.eval);
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let meta: CacheMeta = serde_json::from_value(ck.metadata.clone())?;
        let cache = Self {
            windows: ck.get("windows")?,
            eval: ck.get("eval")?,
            leads: meta.leads,
            class_names: meta.class_names,
            multilabel: meta.multilabel,
            items: meta.items,
        };
        let n = cache.items.len();
        if cache.windows.shape().len() != 3 || cache.eval.shape().len() != 4 || cache.windows.shape()[0] != n || cache.eval.shape()[0] != n {
            return Err(Error::Checkpoint(format!("{}: cache tensors do not match {n} items", path.display())));
        }
        Ok(cache)
    }
}
