//! Synthetic 12-lead ECG with class-dependent morphology.
//!
//! Each beat is a sum of five Gaussian bumps (P, Q, R, S, T) on three
//! orthogonal dipole components. Limb leads I and III project the frontal
//! components; II, aVR, aVL and aVF follow from them by the usual linear
//! identities, so `II = I + III` holds exactly. Precordial leads are random
//! mixtures of all three components plus independent noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{assign_splits, DatasetManifest, ManifestEntry};
use super::{default_lead_names, EcgRecord, Label};
use crate::error::{Error, Result};
use crate::seed;

pub const CLASS_NAMES: [&str; 4] = ["normal", "tachycardia", "wide_qrs", "absent_p"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n_records: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub class_mix: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { n_records: 200, fs: 500.0, duration_s: 10.0, class_mix: vec![0.25; 4], seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationEntry {
    pub record_id: String,
    pub class: usize,
    pub heart_rate: f64,
    pub p_amplitude: f64,
    pub qrs_width_scale: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub records: Vec<EcgRecord>,
    pub manifest: DatasetManifest,
    pub log: Vec<GenerationEntry>,
}

pub fn record_file_name(record_id: &str) -> String {
    format!("{record_id}.cecg")
}

/// Per-class record counts by largest remainder, so they sum to `n`.
pub fn class_counts(class_mix: &[f64], n: usize) -> Result<Vec<usize>> {
    if class_mix.is_empty() || class_mix.len() > CLASS_NAMES.len() {
        return Err(Error::InvalidClassMix(format!("expected 1 to {} weights, got {}", CLASS_NAMES.len(), class_mix.len())));
    }
    if class_mix.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidClassMix(format!("weights must be finite and non-negative: {class_mix:?}")));
    }
    let total: f64 = class_mix.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidClassMix(format!("weights sum to {total}, not 1")));
    }
    let exact: Vec<f64> = class_mix.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut short = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        if class_mix[i] > 0.0 {
            counts[i] += 1;
            short -= 1;
        }
    }
    Ok(counts)
}

struct Wave {
    offset: f64,
    sigma: f64,
    amp: [f64; 3],
}

fn beat_waves(rr: f64, p_amp: f64, qrs_scale: f64, gains: &[f64; 3]) -> [Wave; 5] {
    let s = rr.sqrt();
    let w = qrs_scale;
    let g = |a: [f64; 3]| [a[0] * gains[0], a[1] * gains[1], a[2] * gains[2]];
    [
        Wave { offset: -0.16 * s, sigma: 0.025, amp: g([p_amp, 0.6 * p_amp, 0.3 * p_amp]) },
        Wave { offset: -0.025 * w, sigma: 0.008 * w, amp: g([-0.10, -0.05, 0.15]) },
        Wave { offset: 0.0, sigma: 0.010 * w, amp: g([1.0, 0.6, -0.4]) },
        Wave { offset: 0.025 * w, sigma: 0.008 * w, amp: g([-0.25, -0.40, 0.30]) },
        Wave { offset: 0.28 * s, sigma: 0.045 * s, amp: g([0.30, 0.20, -0.15]) },
    ]
}

/// Generates one record of class `class` from its own seed.
pub fn synth_record(record_id: &str, class: usize, fs: f64, duration_s: f64, seed: u64) -> (EcgRecord, GenerationEntry) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heart_rate = match class {
        1 => 160.0 - 40.0 * rng.random::<f64>(),
        _ => 60.0 + 20.0 * rng.random::<f64>(),
    };
    let p_amplitude = if class == 3 { 0.0 } else { rng.random_range(0.10..0.20) };
    let qrs_width_scale = if class == 2 { 2.5 } else { 1.0 };
    let gains = [rng.random_range(0.8..1.2), rng.random_range(0.8..1.2), rng.random_range(0.8..1.2)];

    let t = (duration_s * fs).round() as usize;
    let rr = 60.0 / heart_rate;
    let waves = beat_waves(rr, p_amplitude, qrs_width_scale, &gains);
    let mut comp = [vec![0.0f64; t], vec![0.0f64; t], vec![0.0f64; t]];
    let first = rng.random_range(0.0..rr);
    let mut beat = first - rr;
    while beat < duration_s + rr {
        for wv in &waves {
            let centre = beat + wv.offset;
            let lo = (((centre - 5.0 * wv.sigma) * fs).floor().max(0.0)) as usize;
            let hi = (((centre + 5.0 * wv.sigma) * fs).ceil().max(0.0) as usize).min(t);
            for i in lo..hi {
                let d = i as f64 / fs - centre;
                let e = (-0.5 * d * d / (wv.sigma * wv.sigma)).exp();
                for (k, c) in comp.iter_mut().enumerate() {
                    c[i] += wv.amp[k] * e;
                }
            }
        }
        beat += rr;
    }

    let noise = Normal::new(0.0, 0.02).unwrap();
    let wander = |rng: &mut ChaCha8Rng| {
        let f = rng.random_range(0.15..0.35);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.02..0.08);
        move |i: usize| amp * (std::f64::consts::TAU * f * i as f64 / fs + phase).sin()
    };
    let (w1, w3) = (wander(&mut rng), wander(&mut rng));
    let (s60, c60) = (60f64.to_radians().sin(), 60f64.to_radians().cos());
    let mut lead_i = vec![0.0f32; t];
    let mut lead_iii = vec![0.0f32; t];
    for i in 0..t {
        let (x, y) = (comp[0][i], comp[1][i]);
        lead_i[i] = (x + w1(i) + noise.sample(&mut rng)) as f32;
        lead_iii[i] = (y * s60 - x * c60 + w3(i) + noise.sample(&mut rng)) as f32;
    }
    let lead_ii: Vec<f32> = lead_i.iter().zip(&lead_iii).map(|(a, b)| a + b).collect();
    let avr: Vec<f32> = lead_i.iter().zip(&lead_ii).map(|(a, b)| -(a + b) / 2.0).collect();
    let avl: Vec<f32> = lead_i.iter().zip(&lead_ii).map(|(a, b)| a - b / 2.0).collect();
    let avf: Vec<f32> = lead_i.iter().zip(&lead_ii).map(|(a, b)| b - a / 2.0).collect();

    let mut samples = Vec::with_capacity(12 * t);
    for lead in [&lead_i, &lead_ii, &lead_iii, &avr, &avl, &avf] {
        samples.extend_from_slice(lead);
    }
    for _ in 0..6 {
        let mix: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..1.5)];
        let w = wander(&mut rng);
        samples.extend((0..t).map(|i| {
            (mix[0] * comp[0][i] + mix[1] * comp[1][i] + mix[2] * comp[2][i] + w(i) + noise.sample(&mut rng)) as f32
        }));
    }
    let rec = EcgRecord {
        record_id: record_id.to_string(),
        leads: default_lead_names(12),
        fs,
        samples,
        label: Some(Label::Single(class)),
    };
    let entry = GenerationEntry { record_id: record_id.to_string(), class, heart_rate, p_amplitude, qrs_width_scale };
    (rec, entry)
}

pub fn generate_synthetic(params: &SynthParams) -> Result<SyntheticSet> {
    if params.n_records == 0 {
        return Err(Error::ParamRange("n_records must be at least 1".into()));
    }
    if !(params.fs > 0.0 && params.duration_s > 0.0) {
        return Err(Error::ParamRange(format!("fs {} and duration {} must be positive", params.fs, params.duration_s)));
    }
    let counts = class_counts(&params.class_mix, params.n_records)?;
    let mut classes: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(&[params.seed, 0xc1a5])));

    let ids: Vec<String> = (0..params.n_records).map(|i| format!("syn{i:05}")).collect();
    let splits = assign_splits(&ids, seed::derive(&[params.seed, 0x5b11]));
    let mut records = Vec::with_capacity(params.n_records);
    let mut log = Vec::with_capacity(params.n_records);
    let mut entries = Vec::with_capacity(params.n_records);
    for (i, (id, &class)) in ids.iter().zip(&classes).enumerate() {
        let (rec, entry) = synth_record(id, class, params.fs, params.duration_s, seed::derive(&[params.seed, i as u64]));
        entries.push(ManifestEntry {
            path: record_file_name(id).into(),
            record_id: id.clone(),
            label: Label::Single(class),
            split: splits[i],
            patient_id: None,
        });
        records.push(rec);
        log.push(entry);
    }
    let manifest = DatasetManifest {
        records: entries,
        class_names: CLASS_NAMES[..params.class_mix.len()].iter().map(|s| s.to_string()).collect(),
        multilabel: false,
    };
    Ok(SyntheticSet { records, manifest, log })
}
