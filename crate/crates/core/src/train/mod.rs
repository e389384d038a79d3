//! Pretraining, fine-tuning and mask-rate sweeps.

pub mod config;
pub mod data;
pub mod finetune;
pub mod optim;
pub mod pretrain;
pub mod sweep;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub use config::{Ablation, FdaConfig, Phase, TrainConfig};
pub use data::PatchCache;
pub use finetune::{evaluate, finetune, FinetuneResult, MetricsRecord};
pub use optim::{lr_at, AdamW};
pub use pretrain::{batch_objective, pretrain, PretrainResult, PretrainSetup, SampleInput};
pub use sweep::{sweep_masks, write_sweep_csv, SweepRow};

/// Newline-delimited JSON log, flushed after every record.
pub struct NdjsonWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl NdjsonWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n").and_then(|_| self.out.flush()).map_err(|e| Error::io(&self.path, e))
    }
}
