use std::cell::RefCell;
use std::fmt;

use super::primitives::{self, Primitive, Saved};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

struct Node<T> {
    value: Tensor<T>,
    /// `None` for leaves and for results computed without any grad-enabled input.
    op: Option<(Primitive, Vec<NodeId>, Saved<T>)>,
    requires_grad: bool,
}

/// Tape of primitive applications.
///
/// Nodes are appended in evaluation order, so ids are a topological order
/// and [`Graph::backward`] is a single reverse sweep. A graph is meant to be
/// built, differentiated once, and dropped; it is not `Sync`.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    graph: &'g Graph<T>,
    id: NodeId,
}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { graph: self, id: nodes.len() - 1 }
    }

    /// A leaf; gradients are reported for it when `requires_grad`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(Node { value, op: None, requires_grad })
    }

    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn var(&self, id: NodeId) -> Var<'_, T> {
        assert!(id < self.len(), "node {id} does not exist");
        Var { graph: self, id }
    }

    /// Evaluates `prim` on `inputs` and records it when any input needs a
    /// gradient.
    pub fn apply(&self, prim: Primitive, inputs: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        for v in inputs {
            assert!(std::ptr::eq(v.graph, self), "variable belongs to a different graph");
        }
        let ids: Vec<NodeId> = inputs.iter().map(|v| v.id).collect();
        let (value, saved, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor<T>> = ids.iter().map(|&i| &nodes[i].value).collect();
            let (value, saved) = primitives::forward(&prim, &values)?;
            (value, saved, ids.iter().any(|&i| nodes[i].requires_grad))
        };
        let op = requires_grad.then_some((prim, ids, saved));
        Ok(self.push(Node { value, op, requires_grad }))
    }

    pub fn value(&self, id: NodeId) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse sweep from a scalar root seeded with 1.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let (shape, requires_grad) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[root.id];
            (n.value.shape().to_vec(), n.requires_grad)
        };
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot(shape));
        }
        if !requires_grad {
            return Err(Error::DetachedRoot);
        }
        self.backward_seeded(&[(root.id, Tensor::ones(&shape))])
    }

    /// Reverse sweep with explicit upstream gradients for several nodes.
    pub fn backward_seeded(&self, seeds: &[(NodeId, Tensor<T>)]) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        for (id, g) in seeds {
            if g.shape() != nodes[*id].value.shape() {
                return Err(Error::shape(
                    "backward",
                    format!("seed {:?} for node of shape {:?}", g.shape(), nodes[*id].value.shape()),
                ));
            }
            accumulate(&mut grads[*id], g.clone());
        }
        let start = seeds.iter().map(|(id, _)| *id).max().unwrap_or(0);
        for id in (0..=start.min(nodes.len().saturating_sub(1))).rev() {
            let node = &nodes[id];
            let Some((prim, inputs, saved)) = &node.op else { continue };
            let Some(g) = grads[id].take() else { continue };
            let values: Vec<&Tensor<T>> = inputs.iter().map(|&i| &nodes[i].value).collect();
            let needs: Vec<bool> = inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_grads = primitives::backward(prim, &values, &node.value, saved, &g, &needs);
            for (&i, ig) in inputs.iter().zip(input_grads) {
                if let Some(ig) = ig {
                    accumulate(&mut grads[i], ig);
                }
            }
        }
        // interior gradients were consumed above; what remains belongs to leaves
        for (slot, node) in grads.iter_mut().zip(nodes.iter()) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
    }
}

/// Leaf gradients produced by a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.get_id(var.id)
    }

    pub fn get_id(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like it when no path reached it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Tensor<T> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, prim: Primitive) -> Result<Var<'g, T>> {
        self.graph.apply(prim, &[self])
    }

    fn binary(self, prim: Primitive, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.graph.apply(prim, &[self, rhs])
    }

    pub fn matmul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Primitive::MatMul { trans_b: false }, rhs)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Primitive::MatMul { trans_b: true }, rhs)
    }

    pub fn add(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Primitive::Add, rhs)
    }

    pub fn sub(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.add(rhs.scale(-1.0)?)
    }

    pub fn mul(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Primitive::Mul, rhs)
    }

    pub fn square(self) -> Result<Var<'g, T>> {
        self.mul(self)
    }

    pub fn scale(self, factor: f64) -> Result<Var<'g, T>> {
        self.unary(Primitive::Scale { factor })
    }

    pub fn conv1d(self, weight: Var<'g, T>, stride: usize) -> Result<Var<'g, T>> {
        self.binary(Primitive::Conv1d { stride }, weight)
    }

    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        self.graph.apply(Primitive::LayerNorm { eps }, &[self, gamma, beta])
    }

    pub fn softmax(self) -> Result<Var<'g, T>> {
        self.unary(Primitive::Softmax { log: false })
    }

    pub fn log_softmax(self) -> Result<Var<'g, T>> {
        self.unary(Primitive::Softmax { log: true })
    }

    pub fn gelu(self) -> Result<Var<'g, T>> {
        self.unary(Primitive::Gelu)
    }

    pub fn sigmoid(self) -> Result<Var<'g, T>> {
        self.unary(Primitive::Sigmoid { log: false })
    }

    pub fn log_sigmoid(self) -> Result<Var<'g, T>> {
        self.unary(Primitive::Sigmoid { log: true })
    }

    pub fn mean(self) -> Result<Var<'g, T>> {
        self.unary(Primitive::MeanPool { axis: None })
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g, T>> {
        self.unary(Primitive::MeanPool { axis: Some(axis) })
    }

    /// Sum of all elements, as `mean · numel`.
    pub fn sum(self) -> Result<Var<'g, T>> {
        let n = self.value().numel() as f64;
        self.mean()?.scale(n)
    }

    pub fn index_select(self, axis: usize, indices: Vec<usize>) -> Result<Var<'g, T>> {
        self.unary(Primitive::IndexSelect { axis, indices })
    }

    /// Rows of `self` at `indices` replaced by the rows of `src`.
    pub fn scatter(self, src: Var<'g, T>, indices: Vec<usize>) -> Result<Var<'g, T>> {
        self.binary(Primitive::Scatter { indices }, src)
    }

    pub fn rfft(self) -> Result<Var<'g, T>> {
        self.unary(Primitive::Rfft)
    }

    pub fn irfft(self, n: usize) -> Result<Var<'g, T>> {
        self.unary(Primitive::Irfft { n })
    }

    pub fn cosine_similarity(self, rhs: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(Primitive::CosineSimilarity, rhs)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        self.unary(Primitive::Reshape { shape: shape.to_vec() })
    }
}

/// Concatenation of several variables along `axis`.
pub fn concat<'g, T: Scalar>(vars: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
    let first = vars.first().ok_or(Error::shape("concat", "no inputs"))?;
    first.graph.apply(Primitive::Concat { axis }, vars)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_shape_algebra() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 4]));
        assert_eq!(a.matmul(b).unwrap().shape(), vec![2, 4]);
        let err = b.matmul(b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("inner dims"), "{err}");
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let g = Graph::<f64>::new();
        let y = g.constant(Tensor::zeros(&[2, 2])).sigmoid().unwrap().value();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rfft_bin_count() {
        let g = Graph::<f64>::new();
        let y = g.constant(Tensor::zeros(&[2250])).rfft().unwrap();
        assert_eq!(y.shape(), vec![1126, 2]);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[0.3, -1.0, 2.0]));
        let grads = g.backward(x.sum().unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_mean_square() {
        let g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let grads = g.backward(x.square().unwrap().mean().unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn fft_round_trip_gradient_is_identity() {
        let g = Graph::<f64>::new();
        let x = g.param(t(&[7], &[0.1, 0.5, -0.3, 2.0, 1.0, -1.0, 0.25]));
        let y = x.rfft().unwrap().irfft(7).unwrap().sum().unwrap();
        let grads = g.backward(y).unwrap();
        for v in grads.get(x).unwrap().data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_consumers_accumulate() {
        // y = a*x + b*x with x shared: dy/dx = a + b
        let g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.5, -2.0]));
        let y = x.scale(3.0).unwrap().add(x.scale(-0.5).unwrap()).unwrap().sum().unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.5, 2.5]);
    }

    #[test]
    fn root_checks() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[3]));
        assert!(matches!(g.backward(x.scale(2.0).unwrap()), Err(Error::NonScalarRoot(_))));
        let c = g.constant(Tensor::ones(&[3])).mean().unwrap();
        assert!(matches!(g.backward(c), Err(Error::DetachedRoot)));
    }

    #[test]
    fn constants_are_not_recorded() {
        let g = Graph::<f64>::new();
        let c = g.constant(Tensor::ones(&[2]));
        let y = c.scale(2.0).unwrap();
        assert!(!y.requires_grad());
        assert!(g.nodes.borrow()[y.id()].op.is_none());
    }

    #[test]
    fn scatter_rejects_repeated_indices() {
        let g = Graph::<f64>::new();
        let base = g.constant(Tensor::zeros(&[4, 2]));
        let src = g.constant(Tensor::ones(&[2, 2]));
        assert!(base.scatter(src, vec![1, 1]).is_err());
        let out = base.scatter(src, vec![3, 0]).unwrap().value();
        assert_eq!(out.data(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn cosine_zero_norm_is_an_error() {
        let g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let b = g.constant(t(&[1, 2], &[1.0, 1.0]));
        assert!(matches!(a.cosine_similarity(b), Err(Error::ZeroNorm { input: 0, row: 1, .. })));
    }
}
