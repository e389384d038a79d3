//! Spatio-temporal dual masking.
//!
//! For every time column a Bernoulli draw decides between masking the whole
//! column and keeping exactly `k` leads visible; in the latter case each
//! remaining lead is dropped (excluded from supervision) with probability
//! `p_lead`, otherwise masked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Visible,
    Masked,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StdmParams {
    pub p_time: f64,
    pub p_lead: f64,
    pub k: usize,
}

impl Default for StdmParams {
    fn default() -> Self {
        Self { p_time: 0.5, p_lead: 0.2, k: 4 }
    }
}

impl StdmParams {
    pub fn validate(&self, c: usize) -> Result<()> {
        for (name, p) in [("p_time", self.p_time), ("p_lead", self.p_lead)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ParamRange(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.k < 1 || self.k > c {
            return Err(Error::ParamRange(format!("k = {} outside [1, {c}]", self.k)));
        }
        Ok(())
    }
}

/// Partition of a `C × N` patch grid into visible, masked and dropped cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    c: usize,
    n: usize,
    roles: Vec<Role>,
    pub seed: u64,
}

impl MaskPlan {
    pub fn from_roles(c: usize, n: usize, roles: Vec<Role>, seed: u64) -> Result<Self> {
        if roles.len() != c * n {
            return Err(Error::PlanMismatch(format!("{} roles for a {c}x{n} grid", roles.len())));
        }
        Ok(Self { c, n, roles, seed })
    }

    pub fn n_leads(&self) -> usize {
        self.c
    }

    pub fn n_patches(&self) -> usize {
        self.n
    }

    pub fn role(&self, lead: usize, patch: usize) -> Role {
        self.roles[lead * self.n + patch]
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    fn matrix(&self, role: Role) -> Vec<u8> {
        self.roles.iter().map(|&r| u8::from(r == role)).collect()
    }

    /// `V` as a row-major `C × N` 0/1 matrix.
    pub fn visible(&self) -> Vec<u8> {
        self.matrix(Role::Visible)
    }

    pub fn masked(&self) -> Vec<u8> {
        self.matrix(Role::Masked)
    }

    pub fn dropped(&self) -> Vec<u8> {
        self.matrix(Role::Dropped)
    }

    /// Flat `lead · N + patch` indices holding `role`, in increasing order.
    pub fn indices(&self, role: Role) -> Vec<usize> {
        self.roles.iter().enumerate().filter(|(_, &r)| r == role).map(|(i, _)| i).collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    /// `(lead, patch)` pairs of visible cells.
    pub fn visible_positions(&self) -> Vec<(usize, usize)> {
        self.indices(Role::Visible).into_iter().map(|i| (i / self.n, i % self.n)).collect()
    }
}

pub fn sample_mask(c: usize, n: usize, params: &StdmParams, seed: u64) -> Result<MaskPlan> {
    params.validate(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut roles = vec![Role::Masked; c * n];
    let mut leads: Vec<usize> = (0..c).collect();
    let mut is_visible = vec![false; c];
    for col in 0..n {
        if rng.random_bool(params.p_time) {
            continue;
        }
        for i in 0..params.k {
            let j = rng.random_range(i..c);
            leads.swap(i, j);
        }
        is_visible.fill(false);
        for &l in &leads[..params.k] {
            is_visible[l] = true;
        }
        for lead in 0..c {
            roles[lead * n + col] = if is_visible[lead] {
                Role::Visible
            } else if rng.random_bool(params.p_lead) {
                Role::Dropped
            } else {
                Role::Masked
            };
        }
    }
    Ok(MaskPlan { c, n, roles, seed })
}

/// Baseline: each cell masked independently with probability `mask_ratio`,
/// nothing dropped.
pub fn uniform_random_mask(c: usize, n: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::ParamRange(format!("mask_ratio = {mask_ratio} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roles = (0..c * n).map(|_| if rng.random_bool(mask_ratio) { Role::Masked } else { Role::Visible }).collect();
    Ok(MaskPlan { c, n, roles, seed })
}

/// The three zero-filled views of a patch tensor under a plan.
#[derive(Debug, Clone)]
pub struct MaskedPatches<T> {
    pub visible: Tensor<T>,
    pub masked: Tensor<T>,
    pub dropped: Tensor<T>,
    pub visible_positions: Vec<(usize, usize)>,
}

pub fn apply_mask<T: Scalar>(x: &Tensor<T>, plan: &MaskPlan) -> Result<MaskedPatches<T>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[0] != plan.c || shape[1] != plan.n {
        return Err(Error::DimensionMismatch {
            context: "apply_mask".into(),
            detail: format!("patches {shape:?} vs plan {}x{}", plan.c, plan.n),
        });
    }
    let p = shape[2];
    let mut out = [Tensor::zeros(shape), Tensor::zeros(shape), Tensor::zeros(shape)];
    for (cell, role) in plan.roles.iter().enumerate() {
        let slot = match role {
            Role::Visible => 0,
            Role::Masked => 1,
            Role::Dropped => 2,
        };
        out[slot].data_mut()[cell * p..(cell + 1) * p].copy_from_slice(&x.data()[cell * p..(cell + 1) * p]);
    }
    let [visible, masked, dropped] = out;
    Ok(MaskedPatches { visible, masked, dropped, visible_positions: plan.visible_positions() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_modes() {
        let all_masked = sample_mask(12, 30, &StdmParams { p_time: 1.0, p_lead: 0.2, k: 4 }, 1).unwrap();
        assert_eq!(all_masked.count(Role::Masked), 360);
        let all_visible = sample_mask(12, 30, &StdmParams { p_time: 0.0, p_lead: 0.9, k: 12 }, 1).unwrap();
        assert_eq!(all_visible.count(Role::Visible), 360);
    }

    #[test]
    fn partial_columns_have_k_visible() {
        let plan = sample_mask(12, 30, &StdmParams::default(), 5).unwrap();
        for col in 0..30 {
            let v = (0..12).filter(|&l| plan.role(l, col) == Role::Visible).count();
            let d = (0..12).filter(|&l| plan.role(l, col) == Role::Dropped).count();
            assert!(v == 4 || (v == 0 && d == 0));
        }
    }

    #[test]
    fn parameter_ranges() {
        assert!(sample_mask(12, 30, &StdmParams { p_time: 1.5, ..Default::default() }, 0).is_err());
        assert!(sample_mask(12, 30, &StdmParams { k: 0, ..Default::default() }, 0).is_err());
        assert!(sample_mask(12, 30, &StdmParams { k: 13, ..Default::default() }, 0).is_err());
        assert!(uniform_random_mask(2, 2, -0.1, 0).is_err());
    }

    #[test]
    fn uniform_extremes() {
        assert_eq!(uniform_random_mask(3, 4, 0.0, 1).unwrap().count(Role::Visible), 12);
        assert_eq!(uniform_random_mask(3, 4, 1.0, 1).unwrap().count(Role::Masked), 12);
    }

    #[test]
    fn apply_mask_all_visible_and_all_masked() {
        let x = Tensor::<f32>::new(vec![2, 3, 2], (0..12).map(|v| v as f32 + 1.0).collect()).unwrap();
        let vis = MaskPlan::from_roles(2, 3, vec![Role::Visible; 6], 0).unwrap();
        let out = apply_mask(&x, &vis).unwrap();
        assert_eq!(out.visible, x);
        assert!(out.masked.data().iter().chain(out.dropped.data()).all(|&v| v == 0.0));
        assert_eq!(out.visible_positions.len(), 6);
        let msk = MaskPlan::from_roles(2, 3, vec![Role::Masked; 6], 0).unwrap();
        assert_eq!(apply_mask(&x, &msk).unwrap().masked, x);
    }
}
