//! Run configuration: one JSON document with `data`, `model`, `train`,
//! `fda`, `stdm` and `output_dir`.

use std::path::{Path, PathBuf};

use ecgssl::model::ModelConfig;
use ecgssl::stdm::StdmParams;
use ecgssl::train::{FdaConfig, PatchCache, PretrainSetup, TrainConfig};
use ecgssl::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Preprocessed patch cache; built from `manifest` when missing.
    pub cache: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    /// Sampling rate assumed for CSV records.
    pub csv_fs: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { cache: None, manifest: None, csv_fs: 500.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fda: FdaConfig,
    pub stdm: StdmParams,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            fda: FdaConfig::default(),
            stdm: StdmParams::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses a config document. Errors name the offending JSON pointer.
pub fn parse(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("at {}: {}", pointer(e.path()), e.inner())))
}

impl RunConfig {
    /// Loads and validates a config. Relative paths inside it are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.data.cache.as_mut().map(rebase);
        cfg.data.manifest.as_mut().map(rebase);
        rebase(&mut cfg.output_dir);
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn pretrain_setup(&self) -> PretrainSetup {
        PretrainSetup { model: self.model.clone(), train: self.train.clone(), stdm: self.stdm, fda: self.fda.clone() }
    }

    /// Loads `data.cache` if it exists, otherwise builds it from
    /// `data.manifest` (saving it to `data.cache` when set).
    pub fn load_cache(&self) -> Result<PatchCache> {
        if let Some(path) = self.data.cache.as_deref().filter(|p| p.exists()) {
            return PatchCache::load(path);
        }
        let Some(manifest) = self.data.manifest.as_deref() else {
            return Err(Error::Config("data.cache does not exist and data.manifest is unset".into()));
        };
        let (cache, failures) = PatchCache::from_manifest(manifest, self.data.csv_fs)?;
        for f in &failures {
            log::warn!("skipped record {}: {}", f.record_id, f.error);
        }
        if let Some(path) = &self.data.cache {
            cache.save(path)?;
        }
        Ok(cache)
    }
}
