use super::{BinaryOp, Tensor, UnaryOp};
use crate::error::{GcadError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Binary {
        op: BinaryOp,
        lhs: NodeId,
        rhs: NodeId,
        broadcast: bool,
    },
    Unary(UnaryOp, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Scale(NodeId, f64),
    Select(NodeId, usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Records tensor operations in creation order so that gradients of a
/// scalar can be propagated back to every recorded value.
///
/// A tape is built fresh for each forward pass and owned by a single
/// caller. Inputs always precede their consumers, so reverse creation
/// order is a valid reverse topological order.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node on a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
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

    /// Records an input (parameter or data) with no parents.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn binary(&mut self, op: BinaryOp, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (l, r) = (self.value(lhs), self.value(rhs));
        let broadcast = l.shape() != r.shape();
        let value = l.binary(op, r)?;
        Ok(self.push(
            Op::Binary {
                op,
                lhs,
                rhs,
                broadcast,
            },
            value,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: NodeId) -> NodeId {
        let value = self.value(a).unary(op);
        self.push(Op::Unary(op, a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Square, a)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), value))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), value))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let value = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(Op::Mean(a), value)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), value)
    }

    /// Picks flat entry `index` of `a` as a scalar node.
    pub fn select(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(a);
        if index >= v.len() {
            return Err(GcadError::Shape(format!(
                "select index {} out of range for {} entries",
                index,
                v.len()
            )));
        }
        let value = Tensor::scalar(v.data()[index]);
        Ok(self.push(Op::Select(a, index), value))
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(GcadError::Contract(format!(
                "node {} is not on this tape",
                root.0
            )));
        }
        if self.value(root).len() != 1 {
            return Err(GcadError::Contract(format!(
                "backward needs a scalar root, node {} has shape {:?}",
                root.0,
                self.value(root).shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.unwrap_or_else(|| Tensor::zeros(node.value.shape())))
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul(&self.value(b).transpose()?)?;
                let db = self.value(a).transpose()?.matmul(g)?;
                accumulate(grads, a, da);
                accumulate(grads, b, db);
            }
            Op::Binary {
                op,
                lhs,
                rhs,
                broadcast,
            } => {
                let (l, r) = (self.value(lhs), self.value(rhs));
                let (dl, dr_full) = match op {
                    BinaryOp::Add => (g.clone(), g.clone()),
                    BinaryOp::Sub => (g.clone(), g.scale(-1.0)),
                    BinaryOp::Mul => (g.binary(BinaryOp::Mul, r)?, g.binary(BinaryOp::Mul, l)?),
                };
                let dr = if broadcast {
                    // Sum the broadcast copies back onto the vector, row by row.
                    let n = r.len();
                    let mut acc = vec![0.0; n];
                    for chunk in dr_full.data().chunks(n) {
                        for (a, v) in acc.iter_mut().zip(chunk) {
                            *a += v;
                        }
                    }
                    Tensor::new(r.shape().to_vec(), acc)?
                } else {
                    dr_full
                };
                accumulate(grads, lhs, dl);
                accumulate(grads, rhs, dr);
            }
            Op::Unary(op, a) => {
                let x = self.value(a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| match op {
                        UnaryOp::Relu => {
                            if xv > 0.0 {
                                gv
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Square => 2.0 * xv * gv,
                    })
                    .collect();
                accumulate(grads, a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Transpose(a) => accumulate(grads, a, g.transpose()?),
            Op::Reshape(a) => accumulate(grads, a, g.reshape(self.value(a).shape())?),
            Op::Sum(a) => {
                accumulate(grads, a, Tensor::filled(self.value(a).shape(), g.data()[0]));
            }
            Op::Mean(a) => {
                let x = self.value(a);
                let v = g.data()[0] / x.len() as f64;
                accumulate(grads, a, Tensor::filled(x.shape(), v));
            }
            Op::Scale(a, factor) => accumulate(grads, a, g.scale(factor)),
            Op::Select(a, index) => {
                let mut d = Tensor::zeros(self.value(a).shape());
                d.data_mut()[index] = g.data()[0];
                accumulate(grads, a, d);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}
