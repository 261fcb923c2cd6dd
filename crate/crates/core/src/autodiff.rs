//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every primitive applied to its nodes. Leaves may borrow
//! their values (model parameters are never copied onto the tape), and
//! intermediate nodes own theirs. [`Tape::backward`] walks the tape once in
//! reverse and returns the gradient of a scalar output for every leaf that was
//! registered as requiring a gradient.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{self, Rect, Tensor};

/// Slope used by [`Tape::leaky_relu`] for negative inputs.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<'a> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Conv2d(NodeId, NodeId),
    Upsample2x(NodeId),
    AvgPool(NodeId, usize),
    Crop(NodeId, Rect),
    Relu(NodeId),
    LeakyRelu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    Log(NodeId),
    Reshape(NodeId),
    MaskMul(NodeId, Cow<'a, Tensor>),
    Sum(NodeId),
    Mean(NodeId),
    SquaredL2(NodeId),
    L1Norm(NodeId),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op<'a>,
    requires_grad: bool,
}

/// Recorded computation. Node ids are only meaningful for the tape that
/// issued them.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `leaf`; leaves the output does not depend on get zeros.
    pub fn wrt(&self, leaf: NodeId) -> Tensor {
        match &self.grads[leaf.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[leaf.0].clone()),
        }
    }

    /// Moves the gradient for `leaf` out of the map.
    pub fn take(&mut self, leaf: NodeId) -> Tensor {
        self.grads[leaf.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[leaf.0].clone()))
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(Cow::Owned(value), true)
    }

    /// Borrowed leaf that receives a gradient (e.g. trainable parameters).
    pub fn param(&mut self, value: &'a Tensor) -> Result<NodeId> {
        self.leaf(Cow::Borrowed(value), true)
    }

    /// Owned leaf without a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(Cow::Owned(value), false)
    }

    /// Borrowed leaf without a gradient.
    pub fn constant_ref(&mut self, value: &'a Tensor) -> Result<NodeId> {
        self.leaf(Cow::Borrowed(value), false)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op<'a>) -> Result<NodeId> {
        let value = value.ensure_finite(op_name)?;
        let requires_grad = match &op {
            Op::Leaf => unreachable!("leaves are pushed through Tape::leaf"),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Conv2d(a, b) => self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad,
            Op::ScalarMul(a, _)
            | Op::Upsample2x(a)
            | Op::AvgPool(a, _)
            | Op::Crop(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Log(a)
            | Op::Reshape(a)
            | Op::MaskMul(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SquaredL2(a)
            | Op::L1Norm(a) => self.nodes[a.0].requires_grad,
        };
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::zip_map("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::zip_map("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::zip_map("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b))
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * c);
        self.push("scalar_mul", v, Op::ScalarMul(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = tensor::add_bias(self.value(x), self.value(bias))?;
        self.push("add_bias", v, Op::AddBias(x, bias))
    }

    pub fn conv2d(&mut self, x: NodeId, weight: NodeId) -> Result<NodeId> {
        let v = tensor::conv2d(self.value(x), self.value(weight))?;
        self.push("conv2d", v, Op::Conv2d(x, weight))
    }

    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let v = tensor::upsample2x(self.value(x))?;
        self.push("upsample2x", v, Op::Upsample2x(x))
    }

    pub fn avgpool(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let v = tensor::avgpool(self.value(x), k)?;
        self.push("avgpool", v, Op::AvgPool(x, k))
    }

    pub fn crop(&mut self, x: NodeId, rect: Rect) -> Result<NodeId> {
        let v = tensor::crop(self.value(x), rect)?;
        self.push("crop", v, Op::Crop(x, rect))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push("relu", v, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self
            .value(x)
            .map(|a| if a > 0.0 { a } else { LEAKY_SLOPE * a });
        self.push("leaky_relu", v, Op::LeakyRelu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(f64::tanh);
        self.push("tanh", v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(x))
    }

    /// `ln σ(x)`, finite for any finite `x`.
    pub fn log_sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(log_sigmoid);
        self.push("log_sigmoid", v, Op::LogSigmoid(x))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(f64::ln);
        self.push("log", v, Op::Log(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push("reshape", v, Op::Reshape(x))
    }

    pub fn mask_mul(&mut self, x: NodeId, mask: Cow<'a, Tensor>) -> Result<NodeId> {
        let v = tensor::mask_mul(self.value(x), &mask)?;
        self.push("mask_mul", v, Op::MaskMul(x, mask))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        self.push("sum", v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push("mean", v, Op::Mean(x))
    }

    /// Sum of squares.
    pub fn squared_l2(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).data().iter().map(|a| a * a).sum());
        self.push("squared_l2", v, Op::SquaredL2(x))
    }

    /// Sum of absolute values.
    pub fn l1_norm(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).data().iter().map(|a| a.abs()).sum());
        self.push("l1_norm", v, Op::L1Norm(x))
    }

    /// `mean((a - b)²)`.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.value(a).len() as f64;
        let d = self.sub(a, b)?;
        let s = self.squared_l2(d)?;
        self.scalar_mul(s, 1.0 / n)
    }

    /// Gradient of the scalar `output` with respect to every leaf that
    /// requires one.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out_value = self.value(output);
        if out_value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got {:?}", out_value.shape()),
            ));
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(Tensor::ones(out_value.shape().to_vec()));
        }

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[i] = None;
            } else if let Some(g) = &grads[i] {
                if !g.is_finite() {
                    return Err(Error::NonFinite("backward"));
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let want = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut send = |id: NodeId, contrib: Tensor| accumulate(grads, id, contrib);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(*a) {
                    send(*a, g.clone());
                }
                if want(*b) {
                    send(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    send(*a, g.clone());
                }
                if want(*b) {
                    send(*b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    send(*a, zip(g, self.value(*b), |gv, bv| gv * bv));
                }
                if want(*b) {
                    send(*b, zip(g, self.value(*a), |gv, av| gv * av));
                }
            }
            Op::ScalarMul(a, c) => send(*a, g.map(|v| v * c)),
            Op::MatMul(a, b) => {
                if want(*a) {
                    send(*a, tensor::matmul_nt(g, self.value(*b)));
                }
                if want(*b) {
                    send(*b, tensor::matmul_tn(self.value(*a), g));
                }
            }
            Op::AddBias(x, bias) => {
                if want(*x) {
                    send(*x, g.clone());
                }
                if want(*bias) {
                    send(*bias, tensor::bias_grad(g));
                }
            }
            Op::Conv2d(x, w) => {
                let (dx, dw) =
                    tensor::conv2d_backward(self.value(*x), self.value(*w), g, want(*x), want(*w));
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                if let Some(dw) = dw {
                    send(*w, dw);
                }
            }
            Op::Upsample2x(x) => send(*x, tensor::upsample2x_backward(g)),
            Op::AvgPool(x, k) => send(*x, tensor::avgpool_backward(g, *k, self.shape(*x))),
            Op::Crop(x, rect) => send(*x, tensor::crop_backward(g, *rect, self.shape(*x))),
            Op::Relu(x) => send(
                *x,
                zip(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
            ),
            Op::LeakyRelu(x) => send(
                *x,
                zip(g, self.value(*x), |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else {
                        LEAKY_SLOPE * gv
                    }
                }),
            ),
            Op::Tanh(x) => send(*x, zip(g, &node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(x) => send(*x, zip(g, &node.value, |gv, y| gv * y * (1.0 - y))),
            Op::LogSigmoid(x) => send(*x, zip(g, self.value(*x), |gv, a| gv * sigmoid(-a))),
            Op::Log(x) => send(*x, zip(g, self.value(*x), |gv, xv| gv / xv)),
            Op::Reshape(x) => {
                let reshaped = g
                    .clone()
                    .reshape(self.shape(*x).to_vec())
                    .expect("reshape preserves size");
                send(*x, reshaped)
            }
            Op::MaskMul(x, mask) => {
                send(*x, tensor::mask_mul(g, mask).expect("validated in forward"))
            }
            Op::Sum(x) => send(*x, Tensor::full(self.shape(*x).to_vec(), g.item())),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                send(*x, Tensor::full(self.shape(*x).to_vec(), g.item() / n))
            }
            Op::SquaredL2(x) => {
                let s = 2.0 * g.item();
                send(*x, self.value(*x).map(|v| s * v))
            }
            Op::L1Norm(x) => {
                let s = g.item();
                send(*x, self.value(*x).map(|v| s * sign(v)))
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, c) in existing.data_mut().iter_mut().zip(contrib.data()) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    tensor::zip_map("backward", a, b, f).expect("backward shapes match forward")
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compares the tape gradient of a scalar function against central finite
/// differences. Returns `max_i |ad_i − fd_i| / max(1, |fd_i|)`.
///
/// `f` receives a fresh tape and the leaf holding `x` and must return the
/// scalar output node.
pub fn grad_check<'a, F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'a>, NodeId) -> Result<NodeId>,
{
    let eval = |point: Tensor| -> Result<f64> {
        let mut tape: Tape<'a> = Tape::new();
        let leaf = tape.constant(point)?;
        let out = f(&mut tape, leaf)?;
        let v = tape.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check"))
        }
    };

    let mut tape: Tape<'a> = Tape::new();
    let leaf = tape.variable(x.clone())?;
    let out = f(&mut tape, leaf)?;
    let analytic = tape.backward(out)?.take(leaf);

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = eval(probe.clone())?;
        probe.data_mut()[i] = orig - step;
        let fm = eval(probe.clone())?;
        probe.data_mut()[i] = orig;
        let fd = (fp - fm) / (2.0 * step);
        let err = (analytic.data()[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
