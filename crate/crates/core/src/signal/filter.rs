//! Zero-phase Butterworth band-pass built from second-order sections.

use super::EcgRecord;
use crate::error::{Error, Result};

pub const HIGHPASS_HZ: f64 = 0.65;
pub const LOWPASS_HZ: f64 = 40.0;
pub const ORDER: usize = 4;

/// One biquad in transposed direct form II: `b0 b1 b2 / 1 a1 a2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Lowpass,
    Highpass,
}

impl Biquad {
    fn new(kind: Kind, k: f64, q: f64) -> Self {
        let norm = 1.0 / (1.0 + k / q + k * k);
        let a = [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm];
        let b = match kind {
            Kind::Lowpass => {
                let b0 = k * k * norm;
                [b0, 2.0 * b0, b0]
            }
            Kind::Highpass => [norm, -2.0 * norm, norm],
        };
        Self { b, a }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that makes a constant unit input produce a constant output.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        [self.b[1] - self.a[0] * g + z2, z2]
    }

    /// Complex response `H(e^{jω})` at `omega` radians per sample, as `(re, im)`.
    pub fn response(&self, omega: f64) -> (f64, f64) {
        let (c1, s1) = (omega.cos(), -omega.sin());
        let (c2, s2) = ((2.0 * omega).cos(), -(2.0 * omega).sin());
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, self.b[1] * s1 + self.b[2] * s2);
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, self.a[0] * s1 + self.a[1] * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d, (num.1 * den.0 - num.0 * den.1) / d)
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos(pub Vec<Biquad>);

impl Sos {
    /// Bilinear-transform Butterworth of even `order` with the cutoff
    /// prewarped so the -3 dB point lands exactly on `cutoff`.
    pub fn butterworth(kind: Kind, order: usize, cutoff: f64, fs: f64) -> Result<Self> {
        if order == 0 || order % 2 != 0 {
            return Err(Error::ParamRange(format!("butterworth order {order} must be even and positive")));
        }
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::FsTooLow { fs, cutoff });
        }
        let k = (std::f64::consts::PI * cutoff / fs).tan();
        let sections = (0..order / 2)
            .map(|i| {
                let theta = std::f64::consts::PI * (2 * i + 1) as f64 / (2 * order) as f64;
                Biquad::new(kind, k, 1.0 / (2.0 * theta.cos()))
            })
            .collect();
        Ok(Sos(sections))
    }

    /// `|H(f)|` of the cascade.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let omega = 2.0 * std::f64::consts::PI * f / fs;
        self.0
            .iter()
            .map(|s| {
                let (re, im) = s.response(omega);
                (re * re + im * im).sqrt()
            })
            .product()
    }

    /// Causal filtering with per-section initial states scaled by `x0`.
    fn run(&self, x: &mut [f64], steady: bool) {
        let mut level = x.first().copied().unwrap_or(0.0);
        for s in &self.0 {
            let [mut z1, mut z2] = if steady { s.step_state().map(|z| z * level) } else { [0.0; 2] };
            level *= s.dc_gain();
            for v in x.iter_mut() {
                let xi = *v;
                let y = s.b[0] * xi + z1;
                z1 = s.b[1] * xi - s.a[0] * y + z2;
                z2 = s.b[2] * xi - s.a[1] * y;
                *v = y;
            }
        }
    }

    /// Forward-backward filtering with odd-reflection padding of `padlen`
    /// samples and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = padlen.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));
        self.run(&mut ext, true);
        ext.reverse();
        self.run(&mut ext, true);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Reflection padding long enough for the high-pass transient to decay:
/// three periods of the high-pass cutoff.
pub fn default_padlen(fs: f64) -> usize {
    (3.0 * fs / HIGHPASS_HZ).ceil() as usize
}

/// High-pass 0.65 Hz then low-pass 40 Hz, each 4th order and zero phase.
pub fn bandpass_filter(rec: &EcgRecord) -> Result<EcgRecord> {
    if rec.fs <= 2.0 * LOWPASS_HZ {
        return Err(Error::FsTooLow { fs: rec.fs, cutoff: LOWPASS_HZ });
    }
    let hp = Sos::butterworth(Kind::Highpass, ORDER, HIGHPASS_HZ, rec.fs)?;
    let lp = Sos::butterworth(Kind::Lowpass, ORDER, LOWPASS_HZ, rec.fs)?;
    let padlen = default_padlen(rec.fs);
    let t = rec.len();
    let mut out = Vec::with_capacity(rec.samples.len());
    for c in 0..rec.n_leads() {
        let lead: Vec<f64> = rec.samples[c * t..(c + 1) * t].iter().map(|&v| v as f64).collect();
        let y = lp.filtfilt(&hp.filtfilt(&lead, padlen), padlen);
        out.extend(y.into_iter().map(|v| v as f32));
    }
    Ok(rec.with_samples(rec.fs, out))
}
