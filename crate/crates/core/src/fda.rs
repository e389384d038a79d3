//! Frequency dynamic augmentation.
//!
//! A learnable per-lead, per-bin weight `W` gives an importance map
//! `A = σ(W)`. Bins at or above the lead's median importance keep a pure
//! `A` scaling; the rest additionally receive Gaussian noise whose scale is
//! inversely proportional to `A`. The real modulation `A + λ⊙Z` multiplies
//! both quadratures of each bin, so the phase of every bin is preserved up
//! to a sign flip.
//!
//! The noise scale `λ` depends on `W` only through gating and normalization;
//! it is evaluated on a snapshot of `A` and treated as a constant by the
//! backward pass, so `W` learns through the `A` term.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{concat, Graph, Scalar, Tensor, Var};

pub const EPSILON: f64 = 1e-6;
pub const QUANTILE: f64 = 0.5;

/// Number of real-FFT bins for a length-`t` signal.
pub fn bins(t: usize) -> usize {
    t / 2 + 1
}

pub fn importance_map<T: Scalar>(w: &Tensor<T>) -> Tensor<T> {
    w.map(|v| {
        let v = v.as_f64();
        T::lit(if v >= 0.0 { 1.0 / (1.0 + (-v).exp()) } else { v.exp() / (1.0 + v.exp()) })
    })
}

/// Nearest-rank-lower `QUANTILE` of each row of a `c × k` matrix.
pub fn per_lead_threshold(a: &[f64], c: usize, k: usize) -> Vec<f64> {
    assert!(k >= 1 && a.len() == c * k);
    let rank = ((QUANTILE * k as f64).ceil() as usize).max(1) - 1;
    a.chunks_exact(k)
        .map(|row| {
            let mut sorted = row.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted[rank]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseScale {
    /// `c × k`, row-major.
    pub lambda: Vec<f64>,
    pub threshold: Vec<f64>,
}

/// Inverse-importance noise scale, zero on gated bins, each row's nonzero
/// entries normalized to mean one.
pub fn noise_scale(a: &[f64], threshold: &[f64], k: usize, epsilon: f64) -> NoiseScale {
    let mut lambda = Vec::with_capacity(a.len());
    for (row, &theta) in a.chunks_exact(k).zip(threshold) {
        let raw: Vec<f64> = row.iter().map(|&v| if v >= theta { 0.0 } else { 1.0 / (epsilon + v) }).collect();
        let nonzero: Vec<f64> = raw.iter().copied().filter(|&v| v != 0.0).collect();
        if nonzero.is_empty() {
            lambda.extend(raw);
        } else {
            let mu = nonzero.iter().sum::<f64>() / nonzero.len() as f64;
            lambda.extend(raw.into_iter().map(|v| v / mu));
        }
    }
    NoiseScale { lambda, threshold: threshold.to_vec() }
}

/// Standard normal draws for a `c × k` grid, row-major.
pub fn sample_noise(c: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..c * k).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// The additive noise term `λ ⊙ Z` for importance weights `w` (`[C, K]`).
pub fn noise_term<T: Scalar>(w: &Tensor<T>, epsilon: f64, seed: u64) -> Result<(Tensor<T>, NoiseScale)> {
    let [c, k] = match w.shape() {
        &[c, k] => [c, k],
        other => return Err(Error::shape("fda", format!("importance weights must be [C, K], got {other:?}"))),
    };
    if epsilon <= 0.0 {
        return Err(Error::ParamRange(format!("epsilon = {epsilon} must be positive")));
    }
    let a = importance_map(w).to_f64_vec();
    let theta = per_lead_threshold(&a, c, k);
    let scale = noise_scale(&a, &theta, k, epsilon);
    let z = sample_noise(c, k, seed);
    let term: Vec<f64> = scale.lambda.iter().zip(&z).map(|(l, z)| l * z).collect();
    Ok((Tensor::from_f64(&[c, k], &term)?, scale))
}

/// Differentiable augmentation of `x` (`[C, T]`) with importance weights
/// `w` (`[C, K]`) and a precomputed noise term (`[C, K]`). Returns `[C, T]`.
pub fn modulate<'g, T: Scalar>(x: Var<'g, T>, w: Var<'g, T>, noise: &Tensor<T>) -> Result<Var<'g, T>> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 2 || ws.len() != 2 || xs[0] != ws[0] || ws[1] != bins(xs[1]) || noise.shape() != ws.as_slice() {
        return Err(Error::shape(
            "fda",
            format!("signal {xs:?}, weights {ws:?}, noise {:?}: need [C,T], [C,T/2+1], [C,T/2+1]", noise.shape()),
        ));
    }
    let (c, k, t) = (ws[0], ws[1], xs[1]);
    let g = x.graph();
    let m = w.sigmoid()?.add(g.constant(noise.clone()))?.reshape(&[c, k, 1])?;
    let m2 = concat(&[m, m], 2)?;
    x.rfft()?.mul(m2)?.irfft(t)
}

/// Non-differentiable convenience: augments a `[C, T]` signal and returns it
/// as `[C, T / patch_len, patch_len]` patches.
pub fn augment<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, epsilon: f64, seed: u64, patch_len: usize) -> Result<Tensor<T>> {
    let t = x.shape().get(1).copied().unwrap_or(0);
    if patch_len == 0 || t % patch_len != 0 {
        return Err(Error::Divisibility { len: t, patch_len });
    }
    let (noise, _) = noise_term(w, epsilon, seed)?;
    let g = Graph::new();
    let y = modulate(g.constant(x.clone()), g.constant(w.clone()), &noise)?;
    y.value().reshape(&[x.shape()[0], t / patch_len, patch_len])
}
