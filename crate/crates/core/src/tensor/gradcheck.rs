//! Central finite-difference verification of primitive gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::primitives::{self, Primitive};
use super::{Graph, Tensor};
use crate::error::Result;

/// Step used for every central difference.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors: `|a − n| / max(|a|, |n|, floor)`.
/// Keeps exact-zero gradients (e.g. DC imaginary parts) from dividing by zero.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub primitive: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub seed: u64,
    pub max_rel_err: f64,
    pub pass: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Input shapes used when a caller does not supply them.
pub fn default_shapes(prim: &Primitive) -> Vec<Vec<usize>> {
    match prim {
        Primitive::MatMul { trans_b: false } => vec![vec![4, 3], vec![3, 2]],
        Primitive::MatMul { trans_b: true } => vec![vec![4, 3], vec![2, 3]],
        Primitive::Add | Primitive::Mul => vec![vec![3, 4], vec![4]],
        Primitive::Conv1d { .. } => vec![vec![2, 2, 9], vec![3, 2, 3]],
        Primitive::LayerNorm { .. } => vec![vec![6, 16]],
        Primitive::Softmax { .. } | Primitive::Sigmoid { .. } | Primitive::MeanPool { .. } => vec![vec![3, 5]],
        Primitive::Gelu => vec![vec![32]],
        Primitive::Concat { .. } => vec![vec![2, 3], vec![2, 3]],
        Primitive::IndexSelect { .. } => vec![vec![5, 3]],
        Primitive::Scatter { indices } => vec![vec![5, 3], vec![indices.len(), 3]],
        Primitive::Rfft => vec![vec![2, 8]],
        Primitive::Irfft { n } => vec![vec![2, n / 2 + 1, 2]],
        Primitive::CosineSimilarity => vec![vec![3, 4], vec![2, 4]],
        Primitive::Scale { .. } => vec![vec![3, 3]],
        Primitive::Reshape { shape } => vec![shape.iter().rev().copied().collect()],
    }
}

/// Every primitive with representative attributes.
pub fn all_primitives() -> Vec<Primitive> {
    vec![
        Primitive::MatMul { trans_b: false },
        Primitive::MatMul { trans_b: true },
        Primitive::Add,
        Primitive::Mul,
        Primitive::Conv1d { stride: 2 },
        Primitive::LayerNorm { eps: 1e-5 },
        Primitive::Softmax { log: false },
        Primitive::Softmax { log: true },
        Primitive::Gelu,
        Primitive::Sigmoid { log: false },
        Primitive::Sigmoid { log: true },
        Primitive::MeanPool { axis: None },
        Primitive::MeanPool { axis: Some(0) },
        Primitive::Concat { axis: 1 },
        Primitive::IndexSelect { axis: 0, indices: vec![4, 0, 4, 2] },
        Primitive::Scatter { indices: vec![3, 1] },
        Primitive::Rfft,
        Primitive::Irfft { n: 8 },
        Primitive::Irfft { n: 7 },
        Primitive::CosineSimilarity,
        Primitive::Scale { factor: -1.7 },
        Primitive::Reshape { shape: vec![3, 4] },
    ]
}

/// Compares the analytic VJP of `prim` against central finite differences of
/// the scalar `Σ out ⊙ R` for a fixed random `R`, at a random float64 point.
pub fn grad_check(prim: &Primitive, shapes: &[Vec<usize>], tol: f64, seed: u64) -> Result<GradCheckReport> {
    let mut shapes = shapes.to_vec();
    if let (Primitive::LayerNorm { .. }, [x]) = (prim, shapes.as_slice()) {
        let d = *x.last().unwrap_or(&1);
        shapes.push(vec![d]);
        shapes.push(vec![d]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|s| Tensor::new(s.clone(), normal(s.iter().product())))
        .collect::<Result<_>>()?;

    let graph = Graph::<f64>::new();
    let vars: Vec<_> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let out = graph.apply(prim.clone(), &vars)?;
    let out_shape = out.shape();
    let weights = Tensor::new(out_shape.clone(), normal(out_shape.iter().product()))?;
    let loss = out.mul(graph.constant(weights.clone()))?.sum()?;
    let grads = graph.backward(loss)?;

    let objective = |ins: &[Tensor<f64>]| -> Result<f64> {
        let refs: Vec<&Tensor<f64>> = ins.iter().collect();
        let (y, _) = primitives::forward(prim, &refs)?;
        Ok(y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
    };

    let mut max_rel_err: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        for j in 0..inputs[i].numel() {
            let mut probe = inputs.clone();
            let base = inputs[i].data()[j];
            probe[i].data_mut()[j] = base + FD_STEP;
            let plus = objective(&probe)?;
            probe[i].data_mut()[j] = base - FD_STEP;
            let minus = objective(&probe)?;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            max_rel_err = max_rel_err.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(GradCheckReport {
        primitive: prim.name(),
        shapes,
        seed,
        max_rel_err,
        pass: max_rel_err <= tol,
    })
}
