//! ECG records, file formats, synthetic data and preprocessing.

pub mod filter;
pub mod format;
pub mod manifest;
pub mod pipeline;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard 12-lead order.
pub const STANDARD_LEADS: [&str; 12] = ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"];

/// Index of `name` in [`STANDARD_LEADS`], case-insensitive.
pub fn standard_lead_index(name: &str) -> Option<usize> {
    let name = name.trim();
    STANDARD_LEADS.iter().position(|l| l.eq_ignore_ascii_case(name))
}

/// Names used when a file carries no lead names.
pub fn default_lead_names(c: usize) -> Vec<String> {
    if c == STANDARD_LEADS.len() {
        STANDARD_LEADS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..c).map(|i| format!("lead{i}")).collect()
    }
}

/// Class annotation: one class index, or a multi-hot vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Single(usize),
    Multi(Vec<u8>),
}

impl Label {
    /// Multi-hot view over `n_classes`.
    pub fn to_multi_hot(&self, n_classes: usize) -> Vec<u8> {
        match self {
            Label::Single(c) => (0..n_classes).map(|i| u8::from(i == *c)).collect(),
            Label::Multi(v) => v.clone(),
        }
    }
}

/// Multi-lead signal in millivolts, stored lead-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub leads: Vec<String>,
    pub fs: f64,
    /// `leads.len() × len` samples, row-major.
    pub samples: Vec<f32>,
    pub label: Option<Label>,
}

impl EcgRecord {
    /// Builds a record and checks the ingestion invariants.
    pub fn new(record_id: impl Into<String>, leads: Vec<String>, fs: f64, samples: Vec<f32>, label: Option<Label>) -> Result<Self> {
        let rec = Self { record_id: record_id.into(), leads, fs, samples, label };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_leads(&self) -> usize {
        self.leads.len()
    }

    pub fn len(&self) -> usize {
        if self.leads.is_empty() {
            0
        } else {
            self.samples.len() / self.leads.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    pub fn lead(&self, c: usize) -> &[f32] {
        let t = self.len();
        &self.samples[c * t..(c + 1) * t]
    }

    pub fn lead_mut(&mut self, c: usize) -> &mut [f32] {
        let t = self.len();
        &mut self.samples[c * t..(c + 1) * t]
    }

    /// Same metadata, new samples (and possibly a new rate and length).
    pub(crate) fn with_samples(&self, fs: f64, samples: Vec<f32>) -> Self {
        Self { record_id: self.record_id.clone(), leads: self.leads.clone(), fs, samples, label: self.label.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = || self.record_id.clone();
        let c = self.leads.len();
        if c == 0 || self.samples.is_empty() {
            return Err(Error::DimensionMismatch { context: ctx(), detail: "record needs at least one lead and one sample".into() });
        }
        if self.samples.len() % c != 0 {
            return Err(Error::DimensionMismatch {
                context: ctx(),
                detail: format!("{} samples do not split into {c} leads", self.samples.len()),
            });
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::DimensionMismatch { context: ctx(), detail: format!("sampling rate {}", self.fs) });
        }
        let t = self.len();
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NanContent { context: ctx(), lead: i / t, index: i % t });
        }
        if c == STANDARD_LEADS.len() {
            let standard = self.leads.iter().enumerate().all(|(i, l)| standard_lead_index(l) == Some(i));
            if !standard {
                return Err(Error::LeadOrder(format!("{}: expected {:?}, found {:?}", self.record_id, STANDARD_LEADS, self.leads)));
            }
        }
        Ok(())
    }

    /// Reorders leads into the standard sequence when all 12 names are
    /// recognized; other layouts are returned unchanged.
    pub fn standardize_lead_order(mut self) -> Result<Self> {
        if self.leads.len() != STANDARD_LEADS.len() {
            return Ok(self);
        }
        let idx: Vec<Option<usize>> = self.leads.iter().map(|l| standard_lead_index(l)).collect();
        let mut seen = [false; 12];
        for i in idx.iter().flatten() {
            seen[*i] = true;
        }
        if idx.iter().any(Option::is_none) || !seen.iter().all(|&s| s) {
            return Err(Error::LeadOrder(format!("{}: unrecognized 12-lead layout {:?}", self.record_id, self.leads)));
        }
        let t = self.len();
        let mut samples = vec![0.0; self.samples.len()];
        for (src, dst) in idx.iter().enumerate() {
            let dst = dst.unwrap();
            samples[dst * t..(dst + 1) * t].copy_from_slice(&self.samples[src * t..(src + 1) * t]);
        }
        self.samples = samples;
        self.leads = default_lead_names(12);
        Ok(self)
    }

    /// Keeps only `indices`, in that order.
    pub fn select_leads(&self, indices: &[usize]) -> Result<Self> {
        let c = self.n_leads();
        if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::Config(format!("lead index {bad} out of range for {c} leads")));
        }
        let mut samples = Vec::with_capacity(indices.len() * self.len());
        for &i in indices {
            samples.extend_from_slice(self.lead(i));
        }
        Ok(Self {
            record_id: self.record_id.clone(),
            leads: indices.iter().map(|&i| self.leads[i].clone()).collect(),
            fs: self.fs,
            samples,
            label: self.label.clone(),
        })
    }
}
