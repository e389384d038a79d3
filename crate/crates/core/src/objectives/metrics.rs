//! Classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub macro_f1: f64,
    /// `NaN` (serialized as `null`) when no class has both positives and negatives.
    pub macro_auroc: f64,
}

/// Area under the ROC curve from the rank-sum statistic with average ranks
/// for ties. `None` without both positives and negatives.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn f1(pred: &[bool], truth: &[bool]) -> Option<f64> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// `probs` and `labels` are `B × K` row-major; `labels` is 0/1 (one-hot for
/// single-label tasks). Classes with neither positive labels nor positive
/// predictions are left out of the F1 average.
pub fn metrics(probs: &[f64], labels: &[u8], k: usize, multilabel: bool) -> Result<Metrics> {
    if probs.is_empty() || k == 0 {
        return Err(Error::EmptyInput("metrics"));
    }
    if probs.len() != labels.len() || probs.len() % k != 0 {
        return Err(Error::DimensionMismatch {
            context: "metrics".into(),
            detail: format!("{} scores, {} labels, {k} classes", probs.len(), labels.len()),
        });
    }
    let b = probs.len() / k;
    let truth: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let pred: Vec<bool> = if multilabel {
        probs.iter().map(|&p| p >= THRESHOLD).collect()
    } else {
        let mut out = vec![false; probs.len()];
        for (i, row) in probs.chunks_exact(k).enumerate() {
            let best = (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            out[i * k + best] = true;
        }
        out
    };
    let acc = if multilabel {
        pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64
    } else {
        (0..b).filter(|&i| (0..k).all(|j| pred[i * k + j] == truth[i * k + j])).count() as f64 / b as f64
    };
    let column = |v: &[bool], j: usize| (0..b).map(|i| v[i * k + j]).collect::<Vec<_>>();
    let macro_f1 = mean((0..k).filter_map(|j| f1(&column(&pred, j), &column(&truth, j))));
    let macro_auroc = mean((0..k).filter_map(|j| {
        let scores: Vec<f64> = (0..b).map(|i| probs[i * k + j]).collect();
        auroc(&scores, &column(&truth, j))
    }));
    Ok(Metrics { acc, macro_f1, macro_auroc })
}
