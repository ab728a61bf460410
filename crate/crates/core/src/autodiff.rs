//! Dynamic reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node whose
//! inputs are strictly earlier nodes, so append order is a topological order.
//! One forward pass builds one graph; [`Graph::backward`] walks it once in
//! reverse and the graph is then spent.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    },
    PixelShuffle {
        input: NodeId,
        r: usize,
    },
    FullyConnected {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Softplus(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Tensor times a one-element node.
    ScaleBy {
        input: NodeId,
        factor: NodeId,
    },
    /// Tensor times a fixed constant.
    Scale(NodeId, f64),
    /// One element of a tensor, as a one-element node.
    Index {
        input: NodeId,
        at: usize,
    },
    /// Constant plane filled with a one-element node.
    Fill(NodeId),
    ConcatChannels(NodeId, NodeId),
    Sum(NodeId),
    SumSquares(NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernels,
                bias,
                ..
            } => {
                let mut v = vec![input, kernels];
                v.extend(bias);
                v
            }
            Op::PixelShuffle { input, .. } => vec![input],
            Op::FullyConnected {
                input,
                weights,
                bias,
            } => vec![input, weights, bias],
            Op::Relu(a) | Op::Softplus(a) | Op::Scale(a, _) | Op::Fill(a) => vec![a],
            Op::Sum(a) | Op::SumSquares(a) => vec![a],
            Op::Index { input, .. } => vec![input],
            Op::ScaleBy { input, factor } => vec![input, factor],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ConcatChannels(a, b) => {
                vec![a, b]
            }
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(Error::UnknownNode(id.0))
    }

    pub fn requires_grad(&self, id: NodeId) -> Result<bool> {
        Ok(self.node(id)?.requires_grad)
    }

    /// Gradient accumulated on `id` by [`Graph::backward`]; `None` if the loss
    /// does not depend on it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>> {
        self.nodes.get(id.0).ok_or(Error::UnknownNode(id.0))
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor<T>, op: Op) -> Result<NodeId> {
        let mut rg = false;
        for i in op.inputs() {
            rg |= self.node(i)?.requires_grad;
        }
        Ok(self.push(value, op, rg))
    }

    fn one_element(&self, id: NodeId, op: &'static str) -> Result<T> {
        let v = self.value(id)?;
        if v.len() != 1 {
            return Err(Error::dim(op, format!("expected a scalar, got shape {:?}", v.shape())));
        }
        Ok(v.data()[0])
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    ) -> Result<NodeId> {
        let b = match bias {
            Some(b) => Some(self.value(b)?),
            None => None,
        };
        let out = kernels::conv2d(self.value(input)?, self.value(kernels)?, b, spec)?;
        self.record(
            out,
            Op::Conv2d {
                input,
                kernels,
                bias,
                spec,
            },
        )
    }

    pub fn conv1x1(&mut self, input: NodeId, kernels: NodeId) -> Result<NodeId> {
        match self.value(kernels)?.shape()[..] {
            [_, _, 1, 1] => self.conv2d(input, kernels, None, ConvSpec::new(1, 0)),
            ref s => Err(Error::dim("conv1x1", format!("kernel must be C_out×C_in×1×1, got {s:?}"))),
        }
    }

    pub fn pixel_shuffle(&mut self, input: NodeId, r: usize) -> Result<NodeId> {
        let out = kernels::pixel_shuffle(self.value(input)?, r)?;
        self.record(out, Op::PixelShuffle { input, r })
    }

    pub fn fully_connected(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let out = kernels::fully_connected(self.value(input)?, self.value(weights)?, self.value(bias)?)?;
        self.record(
            out,
            Op::FullyConnected {
                input,
                weights,
                bias,
            },
        )
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a)?.map(kernels::relu);
        self.record(out, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a)?.map(kernels::softplus);
        self.record(out, Op::Softplus(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a)?.add(self.value(b)?)?;
        self.record(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a)?.sub(self.value(b)?)?;
        self.record(out, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a)?.zip_map(self.value(b)?, "mul", |x, y| x * y)?;
        self.record(out, Op::Mul(a, b))
    }

    /// `input · factor` where `factor` holds a single value.
    pub fn scale_by(&mut self, input: NodeId, factor: NodeId) -> Result<NodeId> {
        let f = self.one_element(factor, "scale_by")?;
        let out = self.value(input)?.scale(f);
        self.record(out, Op::ScaleBy { input, factor })
    }

    pub fn scale(&mut self, input: NodeId, c: f64) -> Result<NodeId> {
        let out = self.value(input)?.scale(T::lit(c));
        self.record(out, Op::Scale(input, c))
    }

    pub fn index(&mut self, input: NodeId, at: usize) -> Result<NodeId> {
        let v = self.value(input)?;
        let x = *v.data().get(at).ok_or_else(|| {
            Error::dim("index", format!("element {at} of tensor with {} values", v.len()))
        })?;
        self.record(Tensor::scalar(x), Op::Index { input, at })
    }

    /// Tensor of `shape` with every entry equal to the one-element `value`.
    pub fn fill(&mut self, value: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.one_element(value, "fill")?;
        let out = Tensor::new(shape.to_vec(), vec![v; shape.iter().product()])?;
        self.record(out, Op::Fill(value))
    }

    /// Stacks two `C×H×W` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        let (ca, ha, wa) = ta.dims3()?;
        let (cb, hb, wb) = tb.dims3()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::dim(
                "concat_channels",
                format!("spatial sizes {ha}×{wa} and {hb}×{wb} differ"),
            ));
        }
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let out = Tensor::new(vec![ca + cb, ha, wa], data)?;
        self.record(out, Op::ConcatChannels(a, b))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a)?.sum();
        self.record(Tensor::scalar(s), Op::Sum(a))
    }

    /// `‖a‖₂²` as a one-element node.
    pub fn sum_squares(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a)?.sq_norm();
        self.record(Tensor::scalar(s), Op::SumSquares(a))
    }

    /// Reverse-mode sweep from the scalar `loss`. Gradients sum over fan-out
    /// and are readable through [`Graph::grad`] afterwards.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let shape = self.value(loss)?.shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(shape, T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contribution) in self.local_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.axpy(T::one(), &contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for every input that needs one.
    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let node = &self.nodes[i];
        let rg = |id: NodeId| self.nodes[id.0].requires_grad;
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut out = Vec::new();
        match node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernels: k,
                bias,
                spec,
            } => {
                if rg(input) {
                    let gi = kernels::conv2d_backward_input(g, val(input).shape(), val(k), spec)?;
                    out.push((input, gi));
                }
                if rg(k) {
                    let gk = kernels::conv2d_backward_kernels(g, val(input), val(k).shape(), spec)?;
                    out.push((k, gk));
                }
                if let Some(b) = bias.filter(|&b| rg(b)) {
                    out.push((b, kernels::conv2d_backward_bias(g)?));
                }
            }
            Op::PixelShuffle { input, r } => {
                out.push((input, kernels::pixel_unshuffle(g, r)?));
            }
            Op::FullyConnected {
                input,
                weights,
                bias,
            } => {
                let (x, w) = (val(input), val(weights));
                let (m, n) = (w.shape()[0], w.shape()[1]);
                if rg(input) {
                    let gx = (0..n)
                        .map(|j| (0..m).map(|r| w.data()[r * n + j] * g.data()[r]).sum())
                        .collect();
                    out.push((input, Tensor::new(vec![n], gx)?));
                }
                if rg(weights) {
                    let mut gw = Vec::with_capacity(m * n);
                    for r in 0..m {
                        gw.extend(x.data().iter().map(|&xj| g.data()[r] * xj));
                    }
                    out.push((weights, Tensor::new(vec![m, n], gw)?));
                }
                if rg(bias) {
                    out.push((bias, g.clone()));
                }
            }
            Op::Relu(a) => {
                let gx = g.zip_map(&node.value, "relu", |gv, y| if y > T::zero() { gv } else { T::zero() })?;
                out.push((a, gx));
            }
            Op::Softplus(a) => {
                out.push((a, g.zip_map(val(a), "softplus", |gv, x| gv * kernels::sigmoid(x))?));
            }
            Op::Add(a, b) => {
                out.push((a, g.clone()));
                out.push((b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((a, g.clone()));
                out.push((b, g.scale(-T::one())));
            }
            Op::Mul(a, b) => {
                if rg(a) {
                    out.push((a, g.zip_map(val(b), "mul", |x, y| x * y)?));
                }
                if rg(b) {
                    out.push((b, g.zip_map(val(a), "mul", |x, y| x * y)?));
                }
            }
            Op::ScaleBy { input, factor } => {
                let f = val(factor).data()[0];
                if rg(input) {
                    out.push((input, g.scale(f)));
                }
                if rg(factor) {
                    let d = g.dot(val(input))?;
                    out.push((factor, Tensor::new(val(factor).shape().to_vec(), vec![d])?));
                }
            }
            Op::Scale(a, c) => out.push((a, g.scale(T::lit(c)))),
            Op::Index { input, at } => {
                let mut gx = Tensor::zeros(val(input).shape().to_vec());
                gx.data_mut()[at] = g.data()[0];
                out.push((input, gx));
            }
            Op::Fill(v) => {
                out.push((v, Tensor::new(val(v).shape().to_vec(), vec![g.sum()])?));
            }
            Op::ConcatChannels(a, b) => {
                let split = val(a).len();
                let ga = Tensor::new(val(a).shape().to_vec(), g.data()[..split].to_vec())?;
                let gb = Tensor::new(val(b).shape().to_vec(), g.data()[split..].to_vec())?;
                out.push((a, ga));
                out.push((b, gb));
            }
            Op::Sum(a) => {
                out.push((a, Tensor::full(val(a).shape().to_vec(), g.data()[0])));
            }
            Op::SumSquares(a) => {
                let s = g.data()[0] + g.data()[0];
                out.push((a, val(a).scale(s)));
            }
        }
        Ok(out)
    }
}
