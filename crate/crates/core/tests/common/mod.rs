#![allow(dead_code)]

pub mod gradient;
pub mod oracles;

use ecgssl::model::ModelConfig;
use ecgssl::signal::synth::{generate_synthetic, SynthParams};
use ecgssl::stdm::StdmParams;
use ecgssl::train::data::{PatchCache, Source};
use ecgssl::train::{FdaConfig, PretrainSetup, TrainConfig};

/// Patch cache over a freshly generated synthetic set.
pub fn synthetic_cache(n_records: usize, seed: u64) -> PatchCache {
    let set = generate_synthetic(&SynthParams { n_records, seed, ..Default::default() }).unwrap();
    let sources: Vec<Source> = set
        .records
        .iter()
        .zip(&set.manifest.records)
        .map(|(r, e)| Source { record: r.clone(), split: e.split, label: e.label.clone() })
        .collect();
    let (cache, failures) = PatchCache::build(&sources, set.manifest.class_names.clone(), false).unwrap();
    assert!(failures.is_empty());
    cache
}

pub fn toy_setup(train: TrainConfig) -> PretrainSetup {
    PretrainSetup { model: ModelConfig::toy(), train, stdm: StdmParams::default(), fda: FdaConfig::default() }
}
