//! Wengert tape: reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends its result to a value arena. When at least one
//! input is gradient-tracked, the operation is also recorded as a node so
//! `backward` can replay the tape in reverse and accumulate vector-Jacobian
//! products. Values of untracked subgraphs are still computed, which makes the
//! same builder code serve both training (tracked parameters) and inference
//! (constant parameters) with bit-identical arithmetic.
//!
//! A tape is a single-threaded context. Independent tapes never share state.

use crate::error::{Result, SvatError};
use crate::tensor::Tensor;

/// Handle to a value in the tape arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive operations the tape can differentiate.
///
/// Shapes are explicit; there is no implicit broadcasting. `Scale` carries a
/// host constant, `Max0` is the hinge `max{0, x}`.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Concat,
    Tanh,
    Softplus,
    Square,
    Sum,
    Mean,
    Max0,
    L2Norm,
    Scale(f64),
    Exp,
    Log,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Concat => "concat",
            OpKind::Tanh => "tanh",
            OpKind::Softplus => "softplus",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Max0 => "max0",
            OpKind::L2Norm => "l2_norm",
            OpKind::Scale(_) => "scale",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: OpKind,
    inputs: Vec<ValueId>,
    out: ValueId,
}

/// Gradients produced by one `backward` pass, indexed by [`ValueId`].
pub struct Gradients {
    by_value: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`, if any flowed there.
    pub fn wrt(&self, id: ValueId) -> Option<&[f64]> {
        self.by_value.get(id.index()).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::wrt`] but materializes zeros for untouched values.
    pub fn wrt_or_zeros(&self, id: ValueId, numel: usize) -> Vec<f64> {
        match self.wrt(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; numel],
        }
    }
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    requires_grad: Vec<bool>,
    produced_by: Vec<Option<usize>>,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Register a leaf value. `requires_grad` marks it as a differentiation
    /// target (parameters, and inputs whose sensitivity is wanted).
    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> ValueId {
        let id = ValueId(self.values.len());
        self.values.push(tensor);
        self.requires_grad.push(requires_grad);
        self.produced_by.push(None);
        id
    }

    pub fn constant(&mut self, tensor: Tensor) -> ValueId {
        self.leaf(tensor, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Result<ValueId> {
        Ok(self.constant(Tensor::scalar(v)?))
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.index()]
    }

    /// Forward value of a one-element tensor.
    pub fn scalar_value(&self, id: ValueId) -> Result<f64> {
        self.value(id).item()
    }

    pub fn requires_grad(&self, id: ValueId) -> bool {
        self.requires_grad[id.index()]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn check_id(&self, id: ValueId) -> Result<()> {
        if id.index() >= self.values.len() {
            return Err(SvatError::Usage(format!(
                "value id {} is not on this tape",
                id.index()
            )));
        }
        Ok(())
    }

    /// Apply a primitive. The result lands in the arena; a node is recorded
    /// only when some input is gradient-tracked.
    pub fn apply(&mut self, op: OpKind, inputs: &[ValueId]) -> Result<ValueId> {
        for &id in inputs {
            self.check_id(id)?;
        }
        let out_tensor = self.eval(&op, inputs)?;
        if !out_tensor.values().iter().all(|v| v.is_finite()) {
            return Err(SvatError::Numeric(format!(
                "{} produced a non-finite result",
                op.name()
            )));
        }
        let tracked = inputs.iter().any(|&id| self.requires_grad[id.index()]);
        let out = ValueId(self.values.len());
        self.values.push(out_tensor);
        self.requires_grad.push(tracked);
        if tracked {
            self.produced_by.push(Some(self.nodes.len()));
            self.nodes.push(Node {
                op,
                inputs: inputs.to_vec(),
                out,
            });
        } else {
            self.produced_by.push(None);
        }
        Ok(out)
    }

    // Convenience wrappers. Binary/unary signatures keep call sites readable.

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Tanh, &[x])
    }

    pub fn softplus(&mut self, x: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Softplus, &[x])
    }

    pub fn square(&mut self, x: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Square, &[x])
    }

    pub fn sum(&mut self, x: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Sum, &[x])
    }

    pub fn mean(&mut self, x: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Mean, &[x])
    }

    pub fn max0(&mut self, x: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Max0, &[x])
    }

    pub fn l2_norm(&mut self, x: ValueId) -> Result<ValueId> {
        self.apply(OpKind::L2Norm, &[x])
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        self.apply(OpKind::Scale(c), &[x])
    }

    pub fn exp(&mut self, x: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Exp, &[x])
    }

    pub fn log(&mut self, x: ValueId) -> Result<ValueId> {
        self.apply(OpKind::Log, &[x])
    }

    fn eval(&self, op: &OpKind, inputs: &[ValueId]) -> Result<Tensor> {
        let arity_err = |n: usize| {
            Err(SvatError::Usage(format!(
                "{} takes {} input(s), got {}",
                op.name(),
                n,
                inputs.len()
            )))
        };
        match op {
            OpKind::MatMul => {
                if inputs.len() != 2 {
                    return arity_err(2);
                }
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                matmul_forward(a, b)
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                if inputs.len() != 2 {
                    return arity_err(2);
                }
                let a = self.value(inputs[0]);
                let b = self.value(inputs[1]);
                if a.shape() != b.shape() {
                    return Err(SvatError::Dimension(format!(
                        "{} on mismatched shapes {:?} vs {:?}",
                        op.name(),
                        a.shape(),
                        b.shape()
                    )));
                }
                let values = a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| match op {
                        OpKind::Add => x + y,
                        OpKind::Sub => x - y,
                        _ => x * y,
                    })
                    .collect();
                Ok(Tensor::from_parts_unchecked(a.shape().to_vec(), values))
            }
            OpKind::Concat => {
                if inputs.is_empty() {
                    return Err(SvatError::Usage("concat of zero inputs".into()));
                }
                let mut values = Vec::new();
                for &id in inputs {
                    values.extend_from_slice(self.value(id).values());
                }
                let n = values.len();
                Ok(Tensor::from_parts_unchecked(vec![n], values))
            }
            OpKind::Tanh
            | OpKind::Softplus
            | OpKind::Square
            | OpKind::Max0
            | OpKind::Exp
            | OpKind::Log
            | OpKind::Scale(_) => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.value(inputs[0]);
                let values = x
                    .values()
                    .iter()
                    .map(|&v| match op {
                        OpKind::Tanh => v.tanh(),
                        OpKind::Softplus => softplus(v),
                        OpKind::Square => v * v,
                        OpKind::Max0 => v.max(0.0),
                        OpKind::Exp => v.exp(),
                        OpKind::Log => v.ln(),
                        OpKind::Scale(c) => c * v,
                        _ => unreachable!(),
                    })
                    .collect();
                Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), values))
            }
            OpKind::Sum | OpKind::Mean => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.value(inputs[0]);
                if x.numel() == 0 {
                    return Err(SvatError::Usage(format!("{} of empty tensor", op.name())));
                }
                let mut acc = 0.0;
                for &v in x.values() {
                    acc += v;
                }
                if matches!(op, OpKind::Mean) {
                    acc /= x.numel() as f64;
                }
                Ok(Tensor::from_parts_unchecked(vec![1], vec![acc]))
            }
            OpKind::L2Norm => {
                if inputs.len() != 1 {
                    return arity_err(1);
                }
                let x = self.value(inputs[0]);
                let mut acc = 0.0;
                for &v in x.values() {
                    acc += v * v;
                }
                Ok(Tensor::from_parts_unchecked(vec![1], vec![acc.sqrt()]))
            }
        }
    }

    /// Reverse pass from a scalar root. Returns one gradient slot per arena
    /// value; leaves that the root does not depend on stay `None` (read as
    /// zeros). May be called repeatedly on the same tape, also after new
    /// nodes were appended.
    pub fn backward(&self, root: ValueId) -> Result<Gradients> {
        self.check_id(root)?;
        if self.value(root).numel() != 1 {
            return Err(SvatError::Usage(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        grads[root.index()] = Some(vec![1.0]);

        let last_node = match self.produced_by[root.index()] {
            Some(n) => n + 1,
            // A leaf root depends on nothing but itself.
            None => 0,
        };
        for node in self.nodes[..last_node].iter().rev() {
            let out_grad = match grads[node.out.index()].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(node, &out_grad, &mut grads);
            grads[node.out.index()] = Some(out_grad);
        }
        Ok(Gradients { by_value: grads })
    }

    fn accumulate_inputs(&self, node: &Node, out_grad: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut add_to = |id: ValueId, contribution: &dyn Fn(&mut [f64])| {
            if !self.requires_grad[id.index()] {
                return;
            }
            let slot = &mut grads[id.index()];
            if slot.is_none() {
                *slot = Some(vec![0.0; self.values[id.index()].numel()]);
            }
            contribution(slot.as_mut().unwrap());
        };

        match &node.op {
            OpKind::MatMul => {
                let a = self.value(node.inputs[0]);
                let b = self.value(node.inputs[1]);
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = if b.shape().len() == 2 { b.shape()[1] } else { 1 };
                // dA = dC . B^T
                add_to(node.inputs[0], &|ga: &mut [f64]| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += out_grad[i * n + j] * b.values()[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                // dB = A^T . dC
                add_to(node.inputs[1], &|gb: &mut [f64]| {
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += a.values()[i * k + p] * out_grad[i * n + j];
                            }
                            gb[p * n + j] += s;
                        }
                    }
                });
            }
            OpKind::Add => {
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for (gi, &d) in g.iter_mut().zip(out_grad) {
                        *gi += d;
                    }
                });
                add_to(node.inputs[1], &|g: &mut [f64]| {
                    for (gi, &d) in g.iter_mut().zip(out_grad) {
                        *gi += d;
                    }
                });
            }
            OpKind::Sub => {
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for (gi, &d) in g.iter_mut().zip(out_grad) {
                        *gi += d;
                    }
                });
                add_to(node.inputs[1], &|g: &mut [f64]| {
                    for (gi, &d) in g.iter_mut().zip(out_grad) {
                        *gi -= d;
                    }
                });
            }
            OpKind::Mul => {
                let a = self.value(node.inputs[0]);
                let b = self.value(node.inputs[1]);
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for i in 0..g.len() {
                        g[i] += out_grad[i] * b.values()[i];
                    }
                });
                add_to(node.inputs[1], &|g: &mut [f64]| {
                    for i in 0..g.len() {
                        g[i] += out_grad[i] * a.values()[i];
                    }
                });
            }
            OpKind::Concat => {
                let mut offset = 0;
                for &input in &node.inputs {
                    let len = self.value(input).numel();
                    let slice = &out_grad[offset..offset + len];
                    add_to(input, &|g: &mut [f64]| {
                        for (gi, &d) in g.iter_mut().zip(slice) {
                            *gi += d;
                        }
                    });
                    offset += len;
                }
            }
            OpKind::Tanh => {
                let y = self.value(node.out);
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for i in 0..g.len() {
                        let t = y.values()[i];
                        g[i] += out_grad[i] * (1.0 - t * t);
                    }
                });
            }
            OpKind::Softplus => {
                let x = self.value(node.inputs[0]);
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for i in 0..g.len() {
                        g[i] += out_grad[i] * sigmoid(x.values()[i]);
                    }
                });
            }
            OpKind::Square => {
                let x = self.value(node.inputs[0]);
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for i in 0..g.len() {
                        g[i] += out_grad[i] * 2.0 * x.values()[i];
                    }
                });
            }
            OpKind::Sum => {
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for gi in g.iter_mut() {
                        *gi += out_grad[0];
                    }
                });
            }
            OpKind::Mean => {
                let n = self.value(node.inputs[0]).numel() as f64;
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for gi in g.iter_mut() {
                        *gi += out_grad[0] / n;
                    }
                });
            }
            OpKind::Max0 => {
                let x = self.value(node.inputs[0]);
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for i in 0..g.len() {
                        if x.values()[i] > 0.0 {
                            g[i] += out_grad[i];
                        }
                    }
                });
            }
            OpKind::L2Norm => {
                let x = self.value(node.inputs[0]);
                let norm = self.value(node.out).values()[0];
                // Subgradient 0 at the origin.
                if norm > 0.0 {
                    add_to(node.inputs[0], &|g: &mut [f64]| {
                        for i in 0..g.len() {
                            g[i] += out_grad[0] * x.values()[i] / norm;
                        }
                    });
                }
            }
            OpKind::Scale(c) => {
                let c = *c;
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for i in 0..g.len() {
                        g[i] += out_grad[i] * c;
                    }
                });
            }
            OpKind::Exp => {
                let y = self.value(node.out);
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for i in 0..g.len() {
                        g[i] += out_grad[i] * y.values()[i];
                    }
                });
            }
            OpKind::Log => {
                let x = self.value(node.inputs[0]);
                add_to(node.inputs[0], &|g: &mut [f64]| {
                    for i in 0..g.len() {
                        g[i] += out_grad[i] / x.values()[i];
                    }
                });
            }
        }
    }
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        other => {
            return Err(SvatError::Dimension(format!(
                "matmul lhs must be 2-d, got {other:?}"
            )))
        }
    };
    let (k2, n, vec_rhs) = match b.shape() {
        [k2, n] => (*k2, *n, false),
        [k2] => (*k2, 1, true),
        other => {
            return Err(SvatError::Dimension(format!(
                "matmul rhs must be 1-d or 2-d, got {other:?}"
            )))
        }
    };
    if k != k2 {
        return Err(SvatError::Dimension(format!(
            "matmul inner dims differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.values()[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b.values()[p * n + j];
            }
        }
    }
    let shape = if vec_rhs { vec![m] } else { vec![m, n] };
    Ok(Tensor::from_parts_unchecked(shape, out))
}

/// Numerically stable `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid via the softplus identity, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    (x - softplus(x)).exp()
}
