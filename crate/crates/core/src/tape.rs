//! Reverse-mode automatic differentiation over a recorded op list.
//!
//! A `Tape` owns every intermediate tensor of one forward pass. Ops push a
//! node and return a `NodeId`; `backward` walks the list once in reverse and
//! accumulates gradients into preallocated slots, always in the same order,
//! so gradients are bit-deterministic. Nodes whose result cannot influence
//! any parameter (`needs_grad == false`) are skipped during the sweep, and
//! convolution/warp nodes with constant data inputs skip their input-gradient
//! kernels entirely.

use crate::error::{Error, Result};
use crate::kernels::{
    box_sum, central_diff, central_diff_adjoint, conv3_backward, conv3_forward, frac2_backward,
    frac2_forward, shift_diff, shift_diff_adjoint, warp_backward, warp_forward,
};
use crate::tensor::{cast, Scalar, Tensor};

/// Index of a node on a `Tape`.
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
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    LeakyRelu(NodeId, f64),
    SoftSign(NodeId),
    ScaleChannels(NodeId, Vec<f64>),
    Concat(Vec<NodeId>),
    SelectChannel(NodeId, usize),
    Conv3 {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
    },
    Frac2 {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Warp {
        image: NodeId,
        disp: NodeId,
    },
    BoxSum(NodeId, usize),
    ShiftDiff(NodeId, usize),
    CentralDiff(NodeId, usize),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// elementwise `x - s` with `s` a scalar node broadcast over `x`
    BroadcastSub(NodeId, NodeId),
}

struct Node<E: Scalar> {
    value: Tensor<E>,
    op: Op,
    needs_grad: bool,
}

/// Gradient slots produced by `Tape::backward`, indexed by `NodeId`.
pub struct Gradients<E: Scalar> {
    slots: Vec<Option<Tensor<E>>>,
}

impl<E: Scalar> Gradients<E> {
    pub fn from_slots(slots: Vec<Option<Tensor<E>>>) -> Self {
        Gradients { slots }
    }

    pub fn get(&self, id: NodeId) -> Option<&Tensor<E>> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<E>> {
        self.slots.get_mut(id.0).and_then(|s| s.take())
    }
}

pub struct Tape<E: Scalar> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor<E>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a tensor that gradients should flow into (a parameter).
    pub fn param(&mut self, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Insert a tensor treated as a constant.
    pub fn constant(&mut self, value: Tensor<E>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape_mismatch(what, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "div")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        let ng = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(value, Op::Div(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, f: f64) -> NodeId {
        let fe = cast::<E>(f);
        let value = self.value(a).map(|x| x * fe);
        let ng = self.needs_grad(a);
        self.push(value, Op::Scale(a, f), ng)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let ce = cast::<E>(c);
        let value = self.value(a).map(|x| x + ce);
        let ng = self.needs_grad(a);
        self.push(value, Op::AddConst(a), ng)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let se = cast::<E>(slope);
        let value = self
            .value(a)
            .map(|x| if x > E::zero() { x } else { x * se });
        let ng = self.needs_grad(a);
        self.push(value, Op::LeakyRelu(a, slope), ng)
    }

    pub fn soft_sign(&mut self, a: NodeId) -> NodeId {
        let one = E::one();
        let value = self.value(a).map(|x| x / (one + x.abs()));
        let ng = self.needs_grad(a);
        self.push(value, Op::SoftSign(a), ng)
    }

    /// Multiply channel `c` by `factors[c]`.
    pub fn scale_channels(&mut self, a: NodeId, factors: &[f64]) -> Result<NodeId> {
        let t = self.value(a);
        if factors.len() != t.channels() {
            return Err(Error::shape_mismatch(
                "scale_channels",
                &[t.channels()],
                &[factors.len()],
            ));
        }
        let mut value = t.clone();
        for (c, &f) in factors.iter().enumerate() {
            let fe = cast::<E>(f);
            for v in value.channel_mut(c) {
                *v = *v * fe;
            }
        }
        let ng = self.needs_grad(a);
        Ok(self.push(value, Op::ScaleChannels(a, factors.to_vec()), ng))
    }

    /// Concatenate along the channel axis; spatial shapes must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Config("concat needs at least one input".into()));
        }
        let spatial = self.value(parts[0]).spatial().to_vec();
        let mut channels = 0usize;
        for &p in parts {
            let t = self.value(p);
            if t.spatial() != spatial.as_slice() {
                return Err(Error::shape_mismatch("concat spatial", &spatial, t.spatial()));
            }
            channels += t.channels();
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(&spatial);
        let mut value = Tensor::zeros(&shape);
        let mut c0 = 0usize;
        for &p in parts {
            let t = self.value(p).clone();
            for c in 0..t.channels() {
                value.channel_mut(c0 + c).copy_from_slice(t.channel(c));
            }
            c0 += t.channels();
        }
        let ng = parts.iter().any(|&p| self.needs_grad(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), ng))
    }

    /// View channel `c` as a single-channel tensor.
    pub fn select_channel(&mut self, a: NodeId, c: usize) -> Result<NodeId> {
        let t = self.value(a);
        if c >= t.channels() {
            return Err(Error::Config(format!(
                "select_channel {} out of {} channels",
                c,
                t.channels()
            )));
        }
        let mut shape = vec![1usize];
        shape.extend_from_slice(t.spatial());
        let mut value = Tensor::zeros(&shape);
        value.data_mut().copy_from_slice(t.channel(c));
        let ng = self.needs_grad(a);
        Ok(self.push(value, Op::SelectChannel(a, c), ng))
    }

    pub fn conv3(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let value = conv3_forward(self.value(input), self.value(weight), self.value(bias), stride)?;
        let ng = self.needs_grad(input) || self.needs_grad(weight) || self.needs_grad(bias);
        Ok(self.push(
            value,
            Op::Conv3 {
                input,
                weight,
                bias,
                stride,
            },
            ng,
        ))
    }

    pub fn frac2(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = frac2_forward(self.value(input), self.value(weight), self.value(bias))?;
        let ng = self.needs_grad(input) || self.needs_grad(weight) || self.needs_grad(bias);
        Ok(self.push(
            value,
            Op::Frac2 {
                input,
                weight,
                bias,
            },
            ng,
        ))
    }

    pub fn warp(&mut self, image: NodeId, disp: NodeId) -> Result<NodeId> {
        let value = warp_forward(self.value(image), self.value(disp))?;
        let ng = self.needs_grad(image) || self.needs_grad(disp);
        Ok(self.push(value, Op::Warp { image, disp }, ng))
    }

    pub fn box_sum(&mut self, a: NodeId, window: usize) -> Result<NodeId> {
        let value = box_sum(self.value(a), window)?;
        let ng = self.needs_grad(a);
        Ok(self.push(value, Op::BoxSum(a, window), ng))
    }

    pub fn shift_diff(&mut self, a: NodeId, spatial_axis: usize) -> Result<NodeId> {
        let value = shift_diff(self.value(a), spatial_axis)?;
        let ng = self.needs_grad(a);
        Ok(self.push(value, Op::ShiftDiff(a, spatial_axis), ng))
    }

    pub fn central_diff(&mut self, a: NodeId, spatial_axis: usize) -> Result<NodeId> {
        let value = central_diff(self.value(a), spatial_axis)?;
        let ng = self.needs_grad(a);
        Ok(self.push(value, Op::CentralDiff(a, spatial_axis), ng))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let mut s = E::zero();
        for &v in self.value(a).data() {
            s = s + v;
        }
        let ng = self.needs_grad(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len();
        let mut s = E::zero();
        for &v in self.value(a).data() {
            s = s + v;
        }
        let value = Tensor::scalar(s * cast::<E>(1.0 / n as f64));
        let ng = self.needs_grad(a);
        self.push(value, Op::MeanAll(a), ng)
    }

    /// `x - s` with `s` scalar, broadcast over all of `x`.
    pub fn broadcast_sub(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.value(s).is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.value(s).shape().to_vec(),
            });
        }
        let sv = self.value(s).data()[0];
        let value = self.value(x).map(|v| v - sv);
        let ng = self.needs_grad(x) || self.needs_grad(s);
        Ok(self.push(value, Op::BroadcastSub(x, s), ng))
    }

    fn accumulate(slots: &mut [Option<Tensor<E>>], id: NodeId, delta: Tensor<E>) {
        match &mut slots[id.0] {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv = *gv + *dv;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a scalar node. Intermediate gradients are dropped
    /// as soon as they are consumed; only leaf nodes keep theirs.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<E>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut slots: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::scalar(E::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = slots[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    slots[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if self.needs_grad(*a) {
                        Self::accumulate(&mut slots, *a, g.clone());
                    }
                    if self.needs_grad(*b) {
                        Self::accumulate(&mut slots, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs_grad(*a) {
                        Self::accumulate(&mut slots, *a, g.clone());
                    }
                    if self.needs_grad(*b) {
                        Self::accumulate(&mut slots, *b, g.map(|v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs_grad(*a) {
                        let d = g.zip_map(self.value(*b), |gv, bv| gv * bv)?;
                        Self::accumulate(&mut slots, *a, d);
                    }
                    if self.needs_grad(*b) {
                        let d = g.zip_map(self.value(*a), |gv, av| gv * av)?;
                        Self::accumulate(&mut slots, *b, d);
                    }
                }
                Op::Div(a, b) => {
                    if self.needs_grad(*a) {
                        let d = g.zip_map(self.value(*b), |gv, bv| gv / bv)?;
                        Self::accumulate(&mut slots, *a, d);
                    }
                    if self.needs_grad(*b) {
                        let av = self.value(*a);
                        let bv = self.value(*b);
                        let mut d = g.clone();
                        for ((dv, &a_), &b_) in
                            d.data_mut().iter_mut().zip(av.data()).zip(bv.data())
                        {
                            *dv = -(*dv) * a_ / (b_ * b_);
                        }
                        Self::accumulate(&mut slots, *b, d);
                    }
                }
                Op::Scale(a, f) => {
                    let fe = cast::<E>(*f);
                    Self::accumulate(&mut slots, *a, g.map(|v| v * fe));
                }
                Op::AddConst(a) => {
                    Self::accumulate(&mut slots, *a, g.clone());
                }
                Op::LeakyRelu(a, slope) => {
                    let se = cast::<E>(*slope);
                    let d = g.zip_map(self.value(*a), |gv, xv| {
                        if xv > E::zero() {
                            gv
                        } else {
                            gv * se
                        }
                    })?;
                    Self::accumulate(&mut slots, *a, d);
                }
                Op::SoftSign(a) => {
                    let one = E::one();
                    let d = g.zip_map(self.value(*a), |gv, xv| {
                        let t = one + xv.abs();
                        gv / (t * t)
                    })?;
                    Self::accumulate(&mut slots, *a, d);
                }
                Op::ScaleChannels(a, factors) => {
                    let mut d = g.clone();
                    for (c, &f) in factors.iter().enumerate() {
                        let fe = cast::<E>(f);
                        for v in d.channel_mut(c) {
                            *v = *v * fe;
                        }
                    }
                    Self::accumulate(&mut slots, *a, d);
                }
                Op::Concat(parts) => {
                    let mut c0 = 0usize;
                    for &p in parts {
                        let t = self.value(p);
                        let pc = t.channels();
                        if self.needs_grad(p) {
                            let mut d = Tensor::zeros(t.shape());
                            for c in 0..pc {
                                d.channel_mut(c).copy_from_slice(g.channel(c0 + c));
                            }
                            Self::accumulate(&mut slots, p, d);
                        }
                        c0 += pc;
                    }
                }
                Op::SelectChannel(a, c) => {
                    let mut d = Tensor::zeros(self.value(*a).shape());
                    d.channel_mut(*c).copy_from_slice(g.data());
                    Self::accumulate(&mut slots, *a, d);
                }
                Op::Conv3 {
                    input,
                    weight,
                    bias,
                    stride,
                } => {
                    let (gi, gw, gb) = conv3_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        *stride,
                        self.needs_grad(*input),
                    )?;
                    if let Some(gi) = gi {
                        Self::accumulate(&mut slots, *input, gi);
                    }
                    if self.needs_grad(*weight) {
                        Self::accumulate(&mut slots, *weight, gw);
                    }
                    if self.needs_grad(*bias) {
                        Self::accumulate(&mut slots, *bias, gb);
                    }
                }
                Op::Frac2 {
                    input,
                    weight,
                    bias,
                } => {
                    let (gi, gw, gb) = frac2_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        self.needs_grad(*input),
                    )?;
                    if let Some(gi) = gi {
                        Self::accumulate(&mut slots, *input, gi);
                    }
                    if self.needs_grad(*weight) {
                        Self::accumulate(&mut slots, *weight, gw);
                    }
                    if self.needs_grad(*bias) {
                        Self::accumulate(&mut slots, *bias, gb);
                    }
                }
                Op::Warp { image, disp } => {
                    let (gi, gd) = warp_backward(
                        self.value(*image),
                        self.value(*disp),
                        &g,
                        self.needs_grad(*image),
                        self.needs_grad(*disp),
                    )?;
                    if let Some(gi) = gi {
                        Self::accumulate(&mut slots, *image, gi);
                    }
                    if let Some(gd) = gd {
                        Self::accumulate(&mut slots, *disp, gd);
                    }
                }
                Op::BoxSum(a, window) => {
                    let d = box_sum(&g, *window)?;
                    Self::accumulate(&mut slots, *a, d);
                }
                Op::ShiftDiff(a, axis) => {
                    let d = shift_diff_adjoint(&g, *axis);
                    Self::accumulate(&mut slots, *a, d);
                }
                Op::CentralDiff(a, axis) => {
                    let d = central_diff_adjoint(&g, *axis);
                    Self::accumulate(&mut slots, *a, d);
                }
                Op::SumAll(a) => {
                    let gv = g.data()[0];
                    let d = Tensor::full(self.value(*a).shape(), gv);
                    Self::accumulate(&mut slots, *a, d);
                }
                Op::MeanAll(a) => {
                    let n = self.value(*a).len();
                    let gv = g.data()[0] * cast::<E>(1.0 / n as f64);
                    let d = Tensor::full(self.value(*a).shape(), gv);
                    Self::accumulate(&mut slots, *a, d);
                }
                Op::BroadcastSub(x, s) => {
                    if self.needs_grad(*x) {
                        Self::accumulate(&mut slots, *x, g.clone());
                    }
                    if self.needs_grad(*s) {
                        let mut total = E::zero();
                        for &gv in g.data() {
                            total = total + gv;
                        }
                        Self::accumulate(&mut slots, *s, Tensor::scalar(-total));
                    }
                }
            }
        }
        Ok(Gradients { slots })
    }
}
