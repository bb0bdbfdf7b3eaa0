//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Graph`]; [`Graph::backward`] walks
//! the tape in reverse and accumulates gradients for every node that
//! (transitively) depends on a trainable leaf.

use std::sync::Arc;

use super::ops;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside the engine (e.g. the transmit
/// emulation or the dynamic focusing layer).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradients for each input given the output gradient. Entries for inputs
    /// with `needs[i] == false` may be `None`.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Leaf,
    Conv2d,
    LeakyRelu(f64),
    MaxPool2(Vec<usize>),
    Upsample2,
    Concat(Vec<usize>),
    Add,
    Pad,
    Crop,
    Slice { start: usize },
    Envelope,
    L1,
    Custom(Arc<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::numerical(format!("non-finite output from node {}", self.nodes.len())));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: vec![],
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: vec![],
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let y = ops::conv2d_forward(self.value(x), self.value(kernel), self.value(bias))?;
        self.push(y, Op::Conv2d, vec![x, kernel, bias])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let y = ops::leaky_relu_forward(self.value(x), slope);
        self.push(y, Op::LeakyRelu(slope), vec![x])
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (y, arg) = ops::maxpool2_forward(self.value(x))?;
        self.push(y, Op::MaxPool2(arg), vec![x])
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let y = ops::upsample2_forward(self.value(x))?;
        self.push(y, Op::Upsample2, vec![x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let counts = tensors.iter().map(|t| t.shape()[0]).collect();
        let y = ops::concat_forward(&tensors)?;
        self.push(y, Op::Concat(counts), parts.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!("add of {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let mut y = ta.clone();
        y.add_assign(tb);
        self.push(y, Op::Add, vec![a, b])
    }

    pub fn pad(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::pad_forward(self.value(x), h, w)?;
        self.push(y, Op::Pad, vec![x])
    }

    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::crop_forward(self.value(x), h, w)?;
        self.push(y, Op::Crop, vec![x])
    }

    /// Sub-tensor `[start, start + len)` along the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let lead = *t.shape().first().ok_or_else(|| Error::shape("slice of scalar"))?;
        if start + len > lead {
            return Err(Error::shape(format!("slice [{start}, {}) beyond axis of {lead}", start + len)));
        }
        let inner: usize = t.shape()[1..].iter().product();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let y = Tensor::new(&shape, t.data()[start * inner..(start + len) * inner].to_vec())?;
        self.push(y, Op::Slice { start }, vec![x])
    }

    pub fn envelope(&mut self, i: Var, q: Var) -> Result<Var> {
        let y = ops::envelope_forward(self.value(i), self.value(q))?;
        self.push(y, Op::Envelope, vec![i, q])
    }

    pub fn l1_loss(&mut self, pred: Var, reference: Var) -> Result<Var> {
        let v = ops::l1_forward(self.value(pred), self.value(reference))?;
        self.push(Tensor::scalar(v), Op::L1, vec![pred, reference])
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let y = op.forward(&tensors)?;
        self.push(y, Op::Custom(op), inputs.to_vec())
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape(), vec![1.0])?);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input = |k: usize| &self.nodes[node.inputs[k].0].value;
            let contributions: Vec<Option<Tensor>> = match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d => {
                    let cg = ops::conv2d_backward(input(0), input(1), input(2), &g, needs[0])?;
                    vec![cg.input, Some(cg.kernel), Some(cg.bias)]
                }
                Op::LeakyRelu(slope) => vec![Some(ops::leaky_relu_backward(input(0), &g, *slope))],
                Op::MaxPool2(arg) => vec![Some(ops::maxpool2_backward(input(0).shape(), arg, &g))],
                Op::Upsample2 => vec![Some(ops::upsample2_backward(&g)?)],
                Op::Concat(counts) => ops::concat_backward(&g, counts)?.into_iter().map(Some).collect(),
                Op::Add => vec![Some(g.clone()), Some(g.clone())],
                Op::Pad => {
                    let (_, h, w) = input(0).chw()?;
                    vec![Some(ops::crop_forward(&g, h, w)?)]
                }
                Op::Crop => {
                    let (_, h, w) = input(0).chw()?;
                    vec![Some(ops::pad_forward(&g, h, w)?)]
                }
                Op::Slice { start } => {
                    let mut full = Tensor::zeros(input(0).shape());
                    let offset = start * g.shape()[1..].iter().product::<usize>();
                    full.data_mut()[offset..offset + g.len()].copy_from_slice(g.data());
                    vec![Some(full)]
                }
                Op::Envelope => {
                    let (gi, gq) = ops::envelope_backward(input(0), input(1), &node.value, &g);
                    vec![Some(gi), Some(gq)]
                }
                Op::L1 => {
                    let gp = ops::l1_backward(input(0), input(1), g.data()[0]);
                    let mut gr = gp.clone();
                    gr.data_mut().iter_mut().for_each(|v| *v = -*v);
                    vec![Some(gp), Some(gr)]
                }
                Op::Custom(op) => {
                    let tensors: Vec<&Tensor> = (0..node.inputs.len()).map(input).collect();
                    op.backward(&tensors, &node.value, &g, &needs)?
                }
            };
            for ((input_var, need), contribution) in node.inputs.iter().zip(&needs).zip(contributions) {
                if !need {
                    continue;
                }
                let Some(c) = contribution else {
                    return Err(Error::numerical(format!(
                        "node {id} produced no gradient for a trainable input"
                    )));
                };
                if c.shape() != self.nodes[input_var.0].value.shape() {
                    return Err(Error::shape(format!(
                        "gradient {:?} for node {} of shape {:?}",
                        c.shape(),
                        input_var.0,
                        self.nodes[input_var.0].value.shape()
                    )));
                }
                match &mut grads[input_var.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }
}
