//! Resampling, windowing, normalization and patching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::filter::bandpass_filter;
use super::EcgRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TARGET_FS: f64 = 250.0;
pub const WINDOW_S: f64 = 10.0;
pub const CROP_LEN: usize = 2250;
pub const PATCH_LEN: usize = 75;
pub const ZSCORE_FLOOR: f64 = 1e-8;

/// Linear interpolation onto a uniform grid at `target_fs`.
pub fn resample(rec: &EcgRecord, target_fs: f64) -> Result<EcgRecord> {
    if !(target_fs.is_finite() && target_fs > 0.0) {
        return Err(Error::InvalidTargetFs(target_fs));
    }
    if rec.fs == target_fs {
        return Ok(rec.clone());
    }
    let t = rec.len();
    let new_t = ((t as f64) * target_fs / rec.fs).round().max(1.0) as usize;
    let step = rec.fs / target_fs;
    let mut out = Vec::with_capacity(rec.n_leads() * new_t);
    for c in 0..rec.n_leads() {
        let lead = rec.lead(c);
        for j in 0..new_t {
            let pos = j as f64 * step;
            let i = (pos.floor() as usize).min(t - 1);
            let frac = pos - i as f64;
            let v = if i + 1 < t {
                lead[i] as f64 * (1.0 - frac) + lead[i + 1] as f64 * frac
            } else {
                lead[t - 1] as f64
            };
            out.push(v as f32);
        }
    }
    Ok(rec.with_samples(target_fs, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    /// Consecutive non-overlapping windows of this many seconds.
    Sliding { window_s: f64 },
    /// One crop of `len` samples at a seeded random offset.
    Random { len: usize },
    /// One crop of `len` samples centered in the record.
    Center { len: usize },
}

/// A cut of a record together with its start sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub record: EcgRecord,
    pub offset: usize,
}

pub fn crop_windows(rec: &EcgRecord, mode: CropMode, seed: u64) -> Result<Vec<Crop>> {
    let t = rec.len();
    let too_short = |detail: String| Error::TooShort { record_id: rec.record_id.clone(), detail };
    let cut = |offset: usize, len: usize| {
        let mut samples = Vec::with_capacity(rec.n_leads() * len);
        for c in 0..rec.n_leads() {
            samples.extend_from_slice(&rec.lead(c)[offset..offset + len]);
        }
        Crop { record: rec.with_samples(rec.fs, samples), offset }
    };
    match mode {
        CropMode::Sliding { window_s } => {
            let w = (window_s * rec.fs).round() as usize;
            if w == 0 {
                return Err(Error::ParamRange(format!("window of {window_s} s")));
            }
            let count = t / w;
            if count == 0 {
                return Err(too_short(format!("{:.2} s is shorter than the {window_s} s window", rec.duration_s())));
            }
            Ok((0..count).map(|i| cut(i * w, w)).collect())
        }
        CropMode::Random { len } | CropMode::Center { len } => {
            if t < len {
                return Err(too_short(format!("{t} samples, crop needs {len}")));
            }
            let offset = match mode {
                CropMode::Random { .. } => ChaCha8Rng::seed_from_u64(seed).random_range(0..=t - len),
                _ => (t - len) / 2,
            };
            Ok(vec![cut(offset, len)])
        }
    }
}

/// Per-lead temporal z-score with the divisor floored at [`ZSCORE_FLOOR`].
pub fn zscore_normalize(rec: &EcgRecord) -> EcgRecord {
    let mut out = rec.clone();
    for c in 0..rec.n_leads() {
        zscore_in_place(out.lead_mut(c));
    }
    out
}

pub(crate) fn zscore_in_place(lead: &mut [f32]) {
    let n = lead.len() as f64;
    let mean = lead.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = lead.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(ZSCORE_FLOOR);
    for v in lead.iter_mut() {
        *v = ((*v as f64 - mean) / std) as f32;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub record_id: String,
    pub crop_offset: usize,
}

/// `[C, N, P]` patches of one crop.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTensor {
    pub data: Tensor<f32>,
    pub patch_len: usize,
    pub origin: Origin,
}

impl PatchTensor {
    pub fn n_leads(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_patches(&self) -> usize {
        self.data.shape()[1]
    }
}

pub fn patchify(rec: &EcgRecord, patch_len: usize, crop_offset: usize) -> Result<PatchTensor> {
    let t = rec.len();
    if patch_len == 0 || t % patch_len != 0 {
        return Err(Error::Divisibility { len: t, patch_len });
    }
    let data = Tensor::new(vec![rec.n_leads(), t / patch_len, patch_len], rec.samples.clone())?;
    Ok(PatchTensor { data, patch_len, origin: Origin { record_id: rec.record_id.clone(), crop_offset } })
}

/// Band-pass, resample to 250 Hz and cut into 10 s windows.
pub fn prepare_windows(rec: &EcgRecord) -> Result<Vec<Crop>> {
    // reject short records before spending time on filtering
    let w = (WINDOW_S * rec.fs).round() as usize;
    if rec.len() < w {
        return Err(Error::TooShort {
            record_id: rec.record_id.clone(),
            detail: format!("{:.2} s is shorter than the {WINDOW_S} s window", rec.duration_s()),
        });
    }
    let filtered = bandpass_filter(rec)?;
    let resampled = resample(&filtered, TARGET_FS)?;
    crop_windows(&resampled, CropMode::Sliding { window_s: WINDOW_S }, 0)
}

/// Crops a prepared window to the model length, normalizes and patches it.
/// `train` selects a seeded random crop; otherwise the centered crop.
pub fn finish_window(window: &Crop, train: bool, seed: u64) -> Result<PatchTensor> {
    let mode = if train { CropMode::Random { len: CROP_LEN } } else { CropMode::Center { len: CROP_LEN } };
    let crop = crop_windows(&window.record, mode, seed)?.remove(0);
    let normalized = zscore_normalize(&crop.record);
    patchify(&normalized, PATCH_LEN, window.offset + crop.offset)
}

/// Full pipeline: every 10 s window of `rec` as a `[C, 30, 75]` tensor.
pub fn preprocess(rec: &EcgRecord, train: bool, seed: u64) -> Result<Vec<PatchTensor>> {
    prepare_windows(rec)?.iter().enumerate().map(|(i, w)| finish_window(w, train, seed.wrapping_add(i as u64))).collect()
}
