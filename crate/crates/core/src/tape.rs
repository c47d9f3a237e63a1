//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is an append-only list of nodes; node ids are topologically
//! ordered (every node's inputs have smaller ids), so the backward sweep is a
//! single reverse pass in id order and gradient accumulation is
//! deterministic.

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

// exp(x) for x above this overflows f64.
const EXP_MAX: f64 = 709.0;

#[derive(Debug)]
enum Op {
    Input,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddRow { a: NodeId, r: NodeId },
    SubRow { a: NodeId, r: NodeId },
    MulRow { a: NodeId, r: NodeId },
    DivRow { a: NodeId, r: NodeId },
    AddScalar { a: NodeId },
    MulScalar { a: NodeId, c: f64 },
    MaxScalar { a: NodeId, c: f64 },
    Exp { a: NodeId },
    Log { a: NodeId },
    Relu { a: NodeId },
    Sigmoid { a: NodeId },
    Sqrt { a: NodeId },
    SumAll { a: NodeId },
    SumAxis0 { a: NodeId },
    SumAxis1 { a: NodeId },
    MaxAxis1 { a: NodeId, argmax: Vec<usize> },
    MaxAxis0 { a: NodeId, argmax: Vec<usize> },
    LogSumExpAxis1 { a: NodeId },
    LogSumExpAxis0 { a: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by a backward sweep. Nodes not reachable from the root
/// have no adjoint.
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints[id.0].as_ref()
    }

    /// Adjoint of `id`, or a zero tensor of the right shape if the node does
    /// not influence the root.
    pub fn wrt(&self, tape: &Tape, id: NodeId) -> Tensor {
        match &self.adjoints[id.0] {
            Some(t) => t.clone(),
            None => {
                let (r, c) = tape.value(id).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul { a, b }, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub { a, b }, v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul { a, b }, v))
    }

    pub fn add_row(&mut self, a: NodeId, r: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(r))?;
        Ok(self.push(Op::AddRow { a, r }, v))
    }

    pub fn sub_row(&mut self, a: NodeId, r: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub_row(self.value(r))?;
        Ok(self.push(Op::SubRow { a, r }, v))
    }

    pub fn mul_row(&mut self, a: NodeId, r: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul_row(self.value(r))?;
        Ok(self.push(Op::MulRow { a, r }, v))
    }

    pub fn div_row(&mut self, a: NodeId, r: NodeId) -> Result<NodeId> {
        let v = self.value(a).div_row(self.value(r))?;
        Ok(self.push(Op::DivRow { a, r }, v))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).add_scalar(c);
        self.push(Op::AddScalar { a }, v)
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(Op::MulScalar { a, c }, v)
    }

    pub fn max_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x.max(c));
        self.push(Op::MaxScalar { a, c }, v)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x > EXP_MAX) {
            return Err(Error::Domain(format!("exp({bad}) overflows")));
        }
        let v = self.value(a).map(f64::exp);
        Ok(self.push(Op::Exp { a }, v))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive input {bad}")));
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(Op::Log { a }, v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu { a }, v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid { a }, v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x < 0.0) {
            return Err(Error::Domain(format!("sqrt of negative input {bad}")));
        }
        let v = self.value(a).map(f64::sqrt);
        Ok(self.push(Op::Sqrt { a }, v))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(Error::Domain("sum over an empty tensor".into()));
        }
        let v = Tensor::scalar(self.value(a).sum_all());
        Ok(self.push(Op::SumAll { a }, v))
    }

    pub fn sum_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(Error::Domain("sum over an empty tensor".into()));
        }
        let v = self.value(a).sum_axis0();
        Ok(self.push(Op::SumAxis0 { a }, v))
    }

    pub fn sum_axis1(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(Error::Domain("sum over an empty tensor".into()));
        }
        let v = self.value(a).sum_axis1();
        Ok(self.push(Op::SumAxis1 { a }, v))
    }

    pub fn max_axis1(&mut self, a: NodeId) -> Result<NodeId> {
        let (v, argmax) = self.value(a).max_axis1()?;
        Ok(self.push(Op::MaxAxis1 { a, argmax }, v))
    }

    pub fn max_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let (v, argmax) = self.value(a).max_axis0()?;
        Ok(self.push(Op::MaxAxis0 { a, argmax }, v))
    }

    pub fn logsumexp_axis1(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).logsumexp_axis1()?;
        Ok(self.push(Op::LogSumExpAxis1 { a }, v))
    }

    pub fn logsumexp_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).logsumexp_axis0()?;
        Ok(self.push(Op::LogSumExpAxis0 { a }, v))
    }

    /// Backward sweep from a scalar (1x1) root with seed 1.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            let (r, c) = self.value(root).shape();
            return Err(Error::Usage(format!(
                "backward root must be a 1x1 scalar, got {r}x{c}"
            )));
        }
        self.backward_seeded(root, Tensor::scalar(1.0))
    }

    /// Backward sweep from any node with an explicit seed adjoint. Used by
    /// the trainer to inject an analytically computed loss gradient at the
    /// logits node.
    pub fn backward_seeded(&self, root: NodeId, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::Usage(format!(
                "seed shape {:?} does not match root shape {:?}",
                seed.shape(),
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.scatter(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn scatter(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Input => {}
            Op::MatMul { a, b } => {
                accumulate(adj, *a, g.matmul_nt(val(*b))?);
                accumulate(adj, *b, val(*a).matmul_tn(g)?);
            }
            Op::Add { a, b } => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Sub { a, b } => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.scale(-1.0));
            }
            Op::Mul { a, b } => {
                accumulate(adj, *a, g.mul(val(*b))?);
                accumulate(adj, *b, g.mul(val(*a))?);
            }
            Op::AddRow { a, r } => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *r, g.sum_axis0());
            }
            Op::SubRow { a, r } => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *r, g.sum_axis0().scale(-1.0));
            }
            Op::MulRow { a, r } => {
                accumulate(adj, *a, g.mul_row(val(*r))?);
                accumulate(adj, *r, g.mul(val(*a))?.sum_axis0());
            }
            Op::DivRow { a, r } => {
                accumulate(adj, *a, g.div_row(val(*r))?);
                let d = g.mul(&node.value)?.sum_axis0().div_row(val(*r))?.scale(-1.0);
                accumulate(adj, *r, d);
            }
            Op::AddScalar { a } => accumulate(adj, *a, g.clone()),
            Op::MulScalar { a, c } => accumulate(adj, *a, g.scale(*c)),
            Op::MaxScalar { a, c } => {
                let mask = val(*a).map(|x| if x > *c { 1.0 } else { 0.0 });
                accumulate(adj, *a, g.mul(&mask)?);
            }
            Op::Exp { a } => accumulate(adj, *a, g.mul(&node.value)?),
            Op::Log { a } => {
                accumulate(adj, *a, g.zip_map(val(*a), "log_bwd", |gv, x| gv / x)?);
            }
            // ReLU subgradient at exactly 0 is 0.
            Op::Relu { a } => {
                let mask = val(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                accumulate(adj, *a, g.mul(&mask)?);
            }
            Op::Sigmoid { a } => {
                let d = g.zip_map(&node.value, "sigmoid_bwd", |gv, y| gv * y * (1.0 - y))?;
                accumulate(adj, *a, d);
            }
            Op::Sqrt { a } => {
                let d = g.zip_map(&node.value, "sqrt_bwd", |gv, y| gv / (2.0 * y))?;
                accumulate(adj, *a, d);
            }
            Op::SumAll { a } => {
                let (r, c) = val(*a).shape();
                let s = g.get(0, 0);
                accumulate(adj, *a, Tensor::raw(r, c, vec![s; r * c]));
            }
            Op::SumAxis0 { a } => {
                let (r, _) = val(*a).shape();
                accumulate(adj, *a, Tensor::zeros(r, g.cols()).add_row(g)?);
            }
            Op::SumAxis1 { a } => {
                let (r, c) = val(*a).shape();
                let mut d = vec![0.0; r * c];
                for (i, chunk) in d.chunks_mut(c).enumerate() {
                    chunk.fill(g.get(i, 0));
                }
                accumulate(adj, *a, Tensor::raw(r, c, d));
            }
            Op::MaxAxis1 { a, argmax } => {
                let (r, c) = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                for (i, &j) in argmax.iter().enumerate() {
                    d.set(i, j, g.get(i, 0));
                }
                accumulate(adj, *a, d);
            }
            Op::MaxAxis0 { a, argmax } => {
                let (r, c) = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                for (j, &i) in argmax.iter().enumerate() {
                    d.set(i, j, g.get(0, j));
                }
                accumulate(adj, *a, d);
            }
            Op::LogSumExpAxis1 { a } => {
                let x = val(*a);
                let (r, c) = x.shape();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let gi = g.get(i, 0);
                    let lse = node.value.get(i, 0);
                    for j in 0..c {
                        d[i * c + j] = gi * (x.get(i, j) - lse).exp();
                    }
                }
                accumulate(adj, *a, Tensor::raw(r, c, d));
            }
            Op::LogSumExpAxis0 { a } => {
                let x = val(*a);
                let (r, c) = x.shape();
                let mut d = vec![0.0; r * c];
                for j in 0..c {
                    let gj = g.get(0, j);
                    let lse = node.value.get(0, j);
                    for i in 0..r {
                        d[i * c + j] = gj * (x.get(i, j) - lse).exp();
                    }
                }
                accumulate(adj, *a, Tensor::raw(r, c, d));
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut adj[id.0] {
        Some(t) => t.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // d(x*x)/dx at x=3 is 6
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn logsumexp_gradient_is_softmax() {
        let mut tape = Tape::new();
        let z = tape.input(Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap());
        let l = tape.logsumexp_axis1(z).unwrap();
        let g = tape.backward(l).unwrap();
        let gz = g.get(z).unwrap();
        assert!((gz.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((gz.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_root_is_a_usage_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_is_deterministic() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(2, 3, vec![0.3, -1.0, 2.0, 0.1, 0.7, -0.4]).unwrap());
        let w = tape.input(Tensor::from_vec(3, 2, vec![0.5, -0.2, 1.5, 0.3, -0.7, 0.9]).unwrap());
        let h = tape.matmul(x, w).unwrap();
        let r = tape.relu(h);
        let s = tape.sum_all(r).unwrap();
        let g1 = tape.backward(s).unwrap();
        let g2 = tape.backward(s).unwrap();
        assert!(g1.get(x).unwrap().bits_eq(g2.get(x).unwrap()));
        assert!(g1.get(w).unwrap().bits_eq(g2.get(w).unwrap()));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(1, 3, vec![-3.0, 0.0, 3.0]).unwrap());
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 3.0]);
        let s = tape.sum_all(r).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn log_domain_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(1, 2, vec![1.0, -0.5]).unwrap());
        assert!(matches!(tape.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn exp_overflow_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(1, 1, vec![800.0]).unwrap());
        assert!(matches!(tape.exp(x), Err(Error::Domain(_))));
    }

    #[test]
    fn log_exp_roundtrip() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(2.0));
        let e = tape.exp(x).unwrap();
        let l = tape.log(e).unwrap();
        assert!((tape.value(l).get(0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_of_zero() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).get(0, 0), 0.5);
    }

    #[test]
    fn unreachable_node_has_no_adjoint() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(1.0));
        let unused = tape.input(Tensor::scalar(5.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(&tape, unused).shape(), (1, 1));
        assert_eq!(g.wrt(&tape, unused).get(0, 0), 0.0);
    }
}
