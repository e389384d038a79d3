//! AdamW and the warmup + cosine learning-rate schedule.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps <= warmup_steps || step > total_steps {
        return Err(Error::ParamRange(format!(
            "lr schedule: step {step}, total {total_steps}, warmup {warmup_steps}"
        )));
    }
    if step < warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    moments: HashMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps, weight_decay, step: 0, moments: HashMap::new() }
    }

    pub fn moments(&self, name: &str) -> Option<&(Tensor<T>, Tensor<T>)> {
        self.moments.get(name)
    }

    /// One update of every parameter named in `grads`. All gradients are
    /// checked before anything changes.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(String, Tensor<T>)], lr: f64) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::CheckpointShape { name: name.clone(), expected: p.shape().to_vec(), found: g.shape().to_vec() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let decay = 1.0 - lr * self.weight_decay;
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                let gi = gi.as_f64();
                let mi = self.beta1 * md[i].as_f64() + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * vd[i].as_f64() + (1.0 - self.beta2) * gi * gi;
                md[i] = T::lit(mi);
                vd[i] = T::lit(vi);
                let update = (mi / c1) / ((vi / c2).sqrt() + self.eps);
                pd[i] = T::lit(pd[i].as_f64() * decay - lr * update);
            }
        }
        Ok(())
    }
}
