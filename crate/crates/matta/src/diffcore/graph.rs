//! Tape-style reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only tape rebuilt for every training step.
//! Every op validates shapes, computes its value through the same kernels
//! as the value-level API, stores the result on the tape, and hands back a
//! tensor carrying a [`NodeId`]. [`Graph::backward`] sweeps the tape in
//! reverse, accumulating gradients additively across fan-out.
//!
//! A graph is confined to one thread for its lifetime; tensors without a
//! node handle are plain immutable values.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Elementwise nonlinearities supported inside blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    GeluTanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::GeluTanh => {
                // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
                let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::GeluTanh => {
                let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                let t = u.tanh();
                let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug)]
enum OpKind {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    SplitLeft { src: NodeId, m: usize },
    SplitRight { src: NodeId, m: usize },
    ConcatCols { a: NodeId, b: NodeId },
    Activation { x: NodeId, kind: Activation },
    LogSoftmaxRows { x: NodeId },
    Exp { x: NodeId },
    Sum { x: NodeId },
    Scale { x: NodeId, factor: f64 },
    StopGradient,
}

struct Node {
    op: OpKind,
    value: Tensor,
}

/// Gradients produced by one backward sweep, keyed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn by_node(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a tracked tensor; absent means unreachable from the seed.
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        t.node().and_then(|id| self.by_node(id))
    }

    /// Gradient of a tracked tensor, densified: unreachable => zeros.
    pub fn get_or_zeros(&self, t: &Tensor) -> Tensor {
        match self.get(t) {
            Some(g) => g.detached(),
            None => Tensor::zeros(t.rows(), t.cols()),
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: OpKind, value: Tensor) -> Tensor {
        let id = NodeId(self.nodes.len());
        debug_assert!(value.all_finite(), "op produced non-finite values");
        let out = value.clone().with_node(id);
        self.nodes.push(Node { op, value });
        out
    }

    fn value_of(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn require_node(&self, t: &Tensor, op: &'static str) -> Result<NodeId> {
        match t.node() {
            Some(id) if id.0 < self.nodes.len() => Ok(id),
            Some(_) => Err(Error::Contract(format!(
                "{op}: tensor belongs to a different graph"
            ))),
            None => Err(Error::Contract(format!(
                "{op}: tensor is not recorded on the graph (bind it first)"
            ))),
        }
    }

    /// Records a value as a leaf (parameter or input). The returned tensor
    /// carries the node handle used to look up its gradient later.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        self.push(OpKind::Leaf, t.detached())
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.require_node(a, "matmul")?, self.require_node(b, "matmul")?);
        let value = a.matmul(b)?;
        Ok(self.push(OpKind::Matmul { a: ia, b: ib }, value))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.require_node(a, "add")?, self.require_node(b, "add")?);
        let value = a.add(b)?;
        Ok(self.push(OpKind::Add { a: ia, b: ib }, value))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (self.require_node(a, "mul")?, self.require_node(b, "mul")?);
        let value = a.hadamard(b)?;
        Ok(self.push(OpKind::Mul { a: ia, b: ib }, value))
    }

    pub fn split_cols(&mut self, x: &Tensor, m: usize) -> Result<(Tensor, Tensor)> {
        let ix = self.require_node(x, "split_cols")?;
        let (l, r) = x.split_cols(m)?;
        let left = self.push(OpKind::SplitLeft { src: ix, m }, l);
        let right = self.push(OpKind::SplitRight { src: ix, m }, r);
        Ok((left, right))
    }

    pub fn concat_cols(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ia, ib) = (
            self.require_node(a, "concat_cols")?,
            self.require_node(b, "concat_cols")?,
        );
        let value = a.concat_cols(b)?;
        Ok(self.push(OpKind::ConcatCols { a: ia, b: ib }, value))
    }

    pub fn activation(&mut self, x: &Tensor, kind: Activation) -> Result<Tensor> {
        let ix = self.require_node(x, "activation")?;
        let value = x.map(|v| kind.apply(v));
        Ok(self.push(OpKind::Activation { x: ix, kind }, value))
    }

    pub fn log_softmax_rows(&mut self, x: &Tensor) -> Result<Tensor> {
        let ix = self.require_node(x, "log_softmax_rows")?;
        let value = x.log_softmax_rows()?;
        Ok(self.push(OpKind::LogSoftmaxRows { x: ix }, value))
    }

    pub fn exp(&mut self, x: &Tensor) -> Result<Tensor> {
        let ix = self.require_node(x, "exp")?;
        let value = x.map(f64::exp);
        if !value.all_finite() {
            return Err(Error::Numerical("exp overflowed".into()));
        }
        Ok(self.push(OpKind::Exp { x: ix }, value))
    }

    /// Full reduction to a 1x1 scalar.
    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        let ix = self.require_node(x, "sum")?;
        let value = Tensor::scalar(x.sum())?;
        Ok(self.push(OpKind::Sum { x: ix }, value))
    }

    /// Multiplication by a plain constant (not differentiated through).
    pub fn scale(&mut self, x: &Tensor, factor: f64) -> Result<Tensor> {
        let ix = self.require_node(x, "scale")?;
        let value = x.scaled(factor);
        Ok(self.push(OpKind::Scale { x: ix, factor }, value))
    }

    /// Forward identity whose backward contributes exactly zero upstream.
    pub fn stop_gradient(&mut self, x: &Tensor) -> Result<Tensor> {
        self.require_node(x, "stop_gradient")?;
        let value = x.detached();
        Ok(self.push(OpKind::StopGradient, value))
    }

    /// Reverse sweep from a scalar seed. Gradient of the seed wrt itself is
    /// 1; contributions accumulate additively across fan-out; nodes the seed
    /// does not depend on end up with no gradient.
    pub fn backward(&self, seed: &Tensor) -> Result<Gradients> {
        let seed_id = self.require_node(seed, "backward")?;
        if seed.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward seed must be 1x1, got {}x{}",
                seed.rows(),
                seed.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[seed_id.0] = Some(Tensor::filled(1, 1, 1.0));

        for id in (0..=seed_id.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                OpKind::Leaf => {}
                OpKind::Matmul { a, b } => {
                    let ga = g.matmul(&self.value_of(*b).transposed())?;
                    let gb = self.value_of(*a).transposed().matmul(&g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                OpKind::Add { a, b } => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                OpKind::Mul { a, b } => {
                    let ga = g.hadamard(self.value_of(*b))?;
                    let gb = g.hadamard(self.value_of(*a))?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                OpKind::SplitLeft { src, m } => {
                    let full = embed_cols(self.value_of(*src).shape(), &g, 0, *m);
                    accumulate(&mut grads, *src, full)?;
                }
                OpKind::SplitRight { src, m } => {
                    let (rows, cols) = self.value_of(*src).shape();
                    let full = embed_cols((rows, cols), &g, *m, cols);
                    accumulate(&mut grads, *src, full)?;
                }
                OpKind::ConcatCols { a, b } => {
                    let n1 = self.value_of(*a).cols();
                    let (ga, gb) = g.split_cols(n1)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                OpKind::Activation { x, kind } => {
                    let deriv = self.value_of(*x).map(|v| kind.derivative(v));
                    accumulate(&mut grads, *x, g.hadamard(&deriv)?)?;
                }
                OpKind::LogSoftmaxRows { x } => {
                    // dx = g - softmax(x) * rowsum(g); softmax = exp(output)
                    let out = &self.nodes[id].value;
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let row_sum: f64 = g.row(r).iter().sum();
                        for c in 0..dx.cols() {
                            let v = dx.get(r, c) - out.get(r, c).exp() * row_sum;
                            dx.set(r, c, v);
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                }
                OpKind::Exp { x } => {
                    let out = &self.nodes[id].value;
                    accumulate(&mut grads, *x, g.hadamard(out)?)?;
                }
                OpKind::Sum { x } => {
                    let (rows, cols) = self.value_of(*x).shape();
                    let gv = g.item()?;
                    accumulate(&mut grads, *x, Tensor::filled(rows, cols, gv))?;
                }
                OpKind::Scale { x, factor } => {
                    accumulate(&mut grads, *x, g.scaled(*factor))?;
                }
                OpKind::StopGradient => {}
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(g) => g.add_assign(&delta),
        slot @ None => {
            *slot = Some(delta);
            Ok(())
        }
    }
}

/// Writes `g` into columns [c0, c1) of a zero tensor with `shape`.
fn embed_cols(shape: (usize, usize), g: &Tensor, c0: usize, c1: usize) -> Tensor {
    let mut full = Tensor::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        for (j, c) in (c0..c1).enumerate() {
            full.set(r, c, g.get(r, j));
        }
    }
    full
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leafs(g: &mut Graph, vals: &[Tensor]) -> Vec<Tensor> {
        vals.iter().map(|v| g.leaf(v)).collect()
    }

    /// Central finite differences of a scalar-valued function of one tensor.
    fn fd_grad(f: impl Fn(&Tensor) -> f64, at: &Tensor, h: f64) -> Tensor {
        let mut out = Tensor::zeros(at.rows(), at.cols());
        for i in 0..at.len() {
            let mut plus = at.detached();
            plus.data_mut()[i] += h;
            let mut minus = at.detached();
            minus.data_mut()[i] -= h;
            out.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn assert_close(analytic: &Tensor, numeric: &Tensor, tol: f64) {
        assert_eq!(analytic.shape(), numeric.shape());
        for i in 0..analytic.len() {
            let a = analytic.data()[i];
            let n = numeric.data()[i];
            let rel = (a - n).abs() / f64::max(1.0, a.abs());
            assert!(rel <= tol, "coord {i}: analytic {a} vs fd {n} (rel {rel})");
        }
    }

    #[test]
    fn identity_gradient_is_one() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.25).unwrap());
        let grads = g.backward(&x).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_requires_scalar_seed() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::zeros(2, 2));
        assert!(g.backward(&x).is_err());
    }

    #[test]
    fn matmul_backward_matches_hand_case() {
        // sum(A.B) wrt A with B = [[1],[1]] gives an all-ones 1x2 row.
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::from_rows(&[[2.0, -3.0]]).unwrap());
        let b = g.leaf(&Tensor::from_rows(&[[1.0], [1.0]]).unwrap());
        let prod = g.matmul(&a, &b).unwrap();
        let s = g.sum(&prod).unwrap();
        let grads = g.backward(&s).unwrap();
        assert_eq!(grads.get(&a).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn matmul_backward_matches_fd() {
        let mut rng = super::super::Rng::new(9);
        let a0 = Tensor::randn(3, 4, 1.0, &mut rng);
        let b0 = Tensor::randn(4, 2, 1.0, &mut rng);
        let f_a = |t: &Tensor| t.matmul(&b0).unwrap().sum();
        let f_b = |t: &Tensor| a0.matmul(t).unwrap().sum();

        let mut g = Graph::new();
        let (a, b) = {
            let v = leafs(&mut g, &[a0.clone(), b0.clone()]);
            (v[0].clone(), v[1].clone())
        };
        let prod = g.matmul(&a, &b).unwrap();
        let s = g.sum(&prod).unwrap();
        let grads = g.backward(&s).unwrap();

        assert_close(grads.get(&a).unwrap(), &fd_grad(f_a, &a0, 1e-6), 1e-7);
        assert_close(grads.get(&b).unwrap(), &fd_grad(f_b, &b0, 1e-6), 1e-7);
    }

    #[test]
    fn add_backward_is_identity_on_both() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let b = g.leaf(&Tensor::from_rows(&[[3.0, 4.0]]).unwrap());
        let s = g.add(&a, &b).unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);
        let total = g.sum(&s).unwrap();
        let grads = g.backward(&total).unwrap();
        assert_eq!(grads.get(&a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(grads.get(&b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn split_concat_backward_round_trip() {
        let mut rng = super::super::Rng::new(21);
        let x0 = Tensor::randn(2, 5, 1.0, &mut rng);
        let w0 = Tensor::randn(2, 5, 1.0, &mut rng);
        // f(x) = sum(w . (concat(split(x, 2)))) = sum(w . x)
        let f = |t: &Tensor| w0.hadamard(t).unwrap().sum();
        let mut g = Graph::new();
        let x = g.leaf(&x0);
        let w = g.leaf(&w0);
        let (l, r) = g.split_cols(&x, 2).unwrap();
        let back = g.concat_cols(&l, &r).unwrap();
        let prod = g.mul(&w, &back).unwrap();
        let s = g.sum(&prod).unwrap();
        let grads = g.backward(&s).unwrap();
        assert_close(grads.get(&x).unwrap(), &fd_grad(f, &x0, 1e-6), 1e-7);
        // exact too: gradient is w itself
        assert_eq!(grads.get(&x).unwrap().data(), w0.data());
    }

    #[test]
    fn degenerate_split_at_zero_and_full() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        let (l, r) = g.split_cols(&x, 0).unwrap();
        assert_eq!(l.shape(), (1, 0));
        assert_eq!(r.data(), x.data());
        let joined = g.concat_cols(&l, &r).unwrap();
        let s = g.sum(&joined).unwrap();
        let grads = g.backward(&s).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn activation_gradients_match_fd() {
        for kind in [Activation::Tanh, Activation::GeluTanh, Activation::Relu] {
            // points away from relu's kink
            let x0 = Tensor::from_rows(&[[0.7, -1.3, 2.1, -0.4]]).unwrap();
            let f = |t: &Tensor| t.map(|v| kind.apply(v)).sum();
            let mut g = Graph::new();
            let x = g.leaf(&x0);
            let a = g.activation(&x, kind).unwrap();
            let s = g.sum(&a).unwrap();
            let grads = g.backward(&s).unwrap();
            assert_close(grads.get(&x).unwrap(), &fd_grad(f, &x0, 1e-6), 1e-7);
        }
    }

    #[test]
    fn gelu_gradient_at_spec_point() {
        let x0 = Tensor::scalar(0.7).unwrap();
        let f = |t: &Tensor| t.map(|v| Activation::GeluTanh.apply(v)).sum();
        let analytic = Activation::GeluTanh.derivative(0.7);
        let numeric = fd_grad(f, &x0, 1e-6).data()[0];
        assert!((analytic - numeric).abs() / analytic.abs() <= 1e-7);
    }

    #[test]
    fn relu_forward() {
        let x = Tensor::from_rows(&[[-1.0, 2.0]]).unwrap();
        assert_eq!(x.map(|v| Activation::Relu.apply(v)).data(), &[0.0, 2.0]);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
    }

    #[test]
    fn log_softmax_backward_matches_fd() {
        let mut rng = super::super::Rng::new(33);
        let x0 = Tensor::randn(3, 4, 2.0, &mut rng);
        let w0 = Tensor::randn(3, 4, 1.0, &mut rng);
        let f = |t: &Tensor| w0.hadamard(&t.log_softmax_rows().unwrap()).unwrap().sum();
        let mut g = Graph::new();
        let x = g.leaf(&x0);
        let w = g.leaf(&w0);
        let ls = g.log_softmax_rows(&x).unwrap();
        let prod = g.mul(&w, &ls).unwrap();
        let s = g.sum(&prod).unwrap();
        let grads = g.backward(&s).unwrap();
        assert_close(grads.get(&x).unwrap(), &fd_grad(f, &x0, 1e-6), 1e-6);
    }

    #[test]
    fn stop_gradient_identity_forward_zero_backward() {
        let x0 = Tensor::from_rows(&[[1.5, -2.0]]).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(&x0);
        let sg = g.stop_gradient(&x).unwrap();
        assert_eq!(sg.data(), x0.data());
        let s = g.sum(&sg).unwrap();
        let grads = g.backward(&s).unwrap();
        assert!(grads.get(&x).is_none());
        assert_eq!(grads.get_or_zeros(&x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn stop_gradient_blocks_one_factor() {
        // d/dx sum(x * stop_gradient(x)) = value(x), not 2x.
        let x0 = Tensor::from_rows(&[[1.5, -2.0, 0.25]]).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(&x0);
        let sg = g.stop_gradient(&x).unwrap();
        let prod = g.mul(&x, &sg).unwrap();
        let s = g.sum(&prod).unwrap();
        let grads = g.backward(&s).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), x0.data());
    }

    #[test]
    fn fan_out_doubles_contribution() {
        // sum(x + x) has gradient 2 everywhere.
        let x0 = Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(&x0);
        let two_x = g.add(&x, &x).unwrap();
        let s = g.sum(&two_x).unwrap();
        let grads = g.backward(&s).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn elementwise_square_gradient() {
        // d/dx sum(x.x) = 2x
        let x0 = Tensor::from_rows(&[[1.0, -3.0, 0.5]]).unwrap();
        let f = |t: &Tensor| t.hadamard(t).unwrap().sum();
        let mut g = Graph::new();
        let x = g.leaf(&x0);
        let sq = g.mul(&x, &x).unwrap();
        let s = g.sum(&sq).unwrap();
        let grads = g.backward(&s).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[2.0, -6.0, 1.0]);
        assert_close(grads.get(&x).unwrap(), &fd_grad(f, &x0, 1e-5), 1e-7);
    }

    #[test]
    fn untracked_tensor_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::zeros(1, 1));
        let plain = Tensor::zeros(1, 1);
        assert!(g.add(&x, &plain).is_err());
    }

    #[test]
    fn exp_backward_matches_fd() {
        let x0 = Tensor::from_rows(&[[0.3, -1.2, 0.9]]).unwrap();
        let f = |t: &Tensor| t.map(f64::exp).sum();
        let mut g = Graph::new();
        let x = g.leaf(&x0);
        let e = g.exp(&x).unwrap();
        let s = g.sum(&e).unwrap();
        let grads = g.backward(&s).unwrap();
        assert_close(grads.get(&x).unwrap(), &fd_grad(f, &x0, 1e-6), 1e-7);
    }
}
