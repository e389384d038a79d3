use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Both objectives.
    Core,
    ContrastiveOnly,
    ReconstructiveOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub ema_momentum: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub fda_enabled: bool,
    /// Uniform random masking at `uniform_mask_ratio` when disabled.
    pub stdm_enabled: bool,
    pub uniform_mask_ratio: f64,
    /// Accepted for reproducibility records; every run is already
    /// deterministic for a fixed seed.
    pub deterministic: bool,
    /// Fraction of the training split used for fine-tuning.
    pub data_ratio: f64,
    /// Lead subset for fine-tuning and evaluation (all cached leads if unset).
    pub leads: Option<Vec<String>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase: Phase::Pretrain,
            epochs: 80,
            batch_size: 256,
            lr: 1.5e-4,
            weight_decay: 0.01,
            warmup_epochs: 5,
            ema_momentum: 0.996,
            tau: 0.2,
            alpha: 1.0,
            beta: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            ablation: Ablation::Core,
            fda_enabled: true,
            stdm_enabled: true,
            uniform_mask_ratio: 0.75,
            deterministic: true,
            data_ratio: 1.0,
            leads: None,
        }
    }
}

impl TrainConfig {
    pub fn finetune() -> Self {
        Self { phase: Phase::Finetune, lr: 8e-5, warmup_epochs: 0, ..Self::default() }
    }

    /// Pretraining settings for the toy model.
    pub fn toy_pretrain() -> Self {
        Self { epochs: 20, batch_size: 8, lr: 1e-3, warmup_epochs: 1, ..Self::default() }
    }

    pub fn toy_finetune() -> Self {
        Self { epochs: 10, batch_size: 8, lr: 5e-4, ..Self::finetune() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad(format!("train.epochs = {} and train.batch_size = {} must be positive", self.epochs, self.batch_size));
        }
        if self.warmup_epochs >= self.epochs {
            return bad(format!("train.warmup_epochs = {} must be below epochs = {}", self.warmup_epochs, self.epochs));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(self.tau > 0.0) {
            return bad("train.lr and train.tau must be positive, weight_decay non-negative".into());
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return bad("train.alpha and train.beta must be non-negative".into());
        }
        for (name, v) in [
            ("ema_momentum", self.ema_momentum),
            ("uniform_mask_ratio", self.uniform_mask_ratio),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("train.{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.data_ratio > 0.0 && self.data_ratio <= 1.0) {
            return bad(format!("train.data_ratio = {} outside (0, 1]", self.data_ratio));
        }
        if self.leads.as_ref().is_some_and(Vec::is_empty) {
            return bad("train.leads must name at least one lead".into());
        }
        let (a, b) = self.loss_weights();
        if a == 0.0 && b == 0.0 && self.phase == Phase::Pretrain {
            return bad("both pretraining objectives are disabled".into());
        }
        Ok(())
    }

    /// `(α, β)` after applying the ablation switch.
    pub fn loss_weights(&self) -> (f64, f64) {
        match self.ablation {
            Ablation::Core => (self.alpha, self.beta),
            Ablation::ContrastiveOnly => (0.0, self.beta),
            Ablation::ReconstructiveOnly => (self.alpha, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdaConfig {
    pub epsilon: f64,
}

impl Default for FdaConfig {
    fn default() -> Self {
        Self { epsilon: crate::fda::EPSILON }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [TrainConfig::default(), TrainConfig::finetune(), TrainConfig::toy_pretrain(), TrainConfig::toy_finetune()] {
            c.validate().unwrap();
        }
        assert!(TrainConfig { warmup_epochs: 80, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn ablation_weights() {
        let c = TrainConfig { ablation: Ablation::ContrastiveOnly, ..Default::default() };
        assert_eq!(c.loss_weights(), (0.0, 1.0));
        let c = TrainConfig { ablation: Ablation::ReconstructiveOnly, ..Default::default() };
        assert_eq!(c.loss_weights(), (1.0, 0.0));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "ablation": "contrastive_only"}"#).unwrap();
        assert_eq!((c.epochs, c.ablation), (3, Ablation::ContrastiveOnly));
    }
}
