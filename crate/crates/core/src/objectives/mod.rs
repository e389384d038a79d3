//! Pretraining and fine-tuning losses.

pub mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stdm::{MaskPlan, Role};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub use metrics::{auroc, metrics, Metrics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_rec: f64,
    pub l_con: f64,
    pub total: f64,
    pub masked_count: usize,
    pub batch_size: usize,
}

/// Sum of squared errors over the `rows` of `pred` against `target`
/// (`[rows.len(), P]`), divided by the number of rows.
pub fn masked_sse<'g, T: Scalar>(pred: Var<'g, T>, target: &Tensor<T>, rows: Vec<usize>) -> Result<Var<'g, T>> {
    if rows.is_empty() {
        return Err(Error::EmptyMask);
    }
    let count = rows.len();
    let diff = pred.index_select(0, rows)?.sub(pred.graph().constant(target.clone()))?;
    diff.square()?.sum()?.scale(1.0 / count as f64)
}

/// Masked-patch reconstruction loss for one sample: squared error summed over
/// masked patches, divided by the number of masked patches.
pub fn reconstruction_loss<T: Scalar>(x: &Tensor<T>, x_hat: &Tensor<T>, plan: &MaskPlan) -> Result<f64> {
    let shape = x.shape();
    if shape.len() != 3 || x_hat.shape() != shape || shape[0] != plan.n_leads() || shape[1] != plan.n_patches() {
        return Err(Error::DimensionMismatch {
            context: "reconstruction_loss".into(),
            detail: format!("x {shape:?}, x_hat {:?}, plan {}x{}", x_hat.shape(), plan.n_leads(), plan.n_patches()),
        });
    }
    let rows = plan.indices(Role::Masked);
    let p = shape[2];
    let mut target = Vec::with_capacity(rows.len() * p);
    for &r in &rows {
        target.extend_from_slice(&x.data()[r * p..(r + 1) * p]);
    }
    let target = Tensor::new(vec![rows.len(), p], target)?;
    let g = Graph::new();
    let pred = g.constant(x_hat.reshape(&[shape[0] * shape[1], p])?);
    Ok(masked_sse(pred, &target, rows)?.value().item().as_f64())
}

/// InfoNCE with teacher projections as the candidate set; mean over anchors.
pub fn infonce<'g, T: Scalar>(h_s: Var<'g, T>, h_t: Var<'g, T>, tau: f64) -> Result<Var<'g, T>> {
    if tau <= 0.0 {
        return Err(Error::ParamRange(format!("temperature {tau} must be positive")));
    }
    let (bs, bt) = (h_s.shape(), h_t.shape());
    if bs.len() != 2 || bs != bt || bs[0] == 0 {
        return Err(Error::shape("infonce", format!("student {bs:?} vs teacher {bt:?}")));
    }
    let b = bs[0];
    let logp = h_s.cosine_similarity(h_t)?.scale(1.0 / tau)?.log_softmax()?;
    let diag = (0..b).map(|i| i * (b + 1)).collect();
    logp.reshape(&[b * b])?.index_select(0, diag)?.mean()?.scale(-1.0)
}

pub fn infonce_loss<T: Scalar>(h_s: &Tensor<T>, h_t: &Tensor<T>, tau: f64) -> Result<f64> {
    let g = Graph::new();
    Ok(infonce(g.constant(h_s.clone()), g.constant(h_t.clone()), tau)?.value().item().as_f64())
}

pub fn total_loss(l_rec: f64, l_con: f64, alpha: f64, beta: f64) -> f64 {
    alpha * l_rec + beta * l_con
}

/// Mean softmax cross-entropy of `[B, K]` logits against class indices.
pub fn cross_entropy<'g, T: Scalar>(logits: Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() || labels.iter().any(|&y| y >= s[1]) {
        return Err(Error::shape("cross_entropy", format!("logits {s:?} with labels {labels:?}")));
    }
    let k = s[1];
    let picks = labels.iter().enumerate().map(|(i, &y)| i * k + y).collect();
    logits.log_softmax()?.reshape(&[s[0] * k])?.index_select(0, picks)?.mean()?.scale(-1.0)
}

/// Mean per-label binary cross-entropy of `[B, K]` logits against a 0/1 matrix.
pub fn binary_cross_entropy<'g, T: Scalar>(logits: Var<'g, T>, targets: &Tensor<T>) -> Result<Var<'g, T>> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape("binary_cross_entropy", format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape())));
    }
    let g = logits.graph();
    let pos = logits.log_sigmoid()?.mul(g.constant(targets.clone()))?;
    let neg = logits.scale(-1.0)?.log_sigmoid()?.mul(g.constant(targets.map(|y| T::one() - y)))?;
    pos.add(neg)?.mean()?.scale(-1.0)
}
