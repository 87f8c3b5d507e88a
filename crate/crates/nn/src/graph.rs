//! Reverse-mode autodiff over a closed op set: strided same-padded conv,
//! transposed conv, elementwise add/mul/sigmoid/tanh, channel concat/slice,
//! dropout, scalar scale, sum, and the two weighted loss reductions.
//!
//! A `Graph` records the forward pass; `backward` consumes it and returns
//! gradients for every tracked node. Values are immutable — no op mutates
//! its inputs.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::kernels;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        col: Arc<Vec<f32>>,
    },
    TConv2d {
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    ConcatChannels(NodeId, NodeId),
    SliceChannels {
        x: NodeId,
        from: usize,
        to: usize,
    },
    Dropout {
        x: NodeId,
        mask: Tensor,
    },
    Scale {
        x: NodeId,
        factor: f32,
    },
    Sum(NodeId),
    WeightedHuberMean {
        x: NodeId,
        target: Tensor,
        weight: Tensor,
        delta: f32,
    },
    WeightedSqMean {
        x: NodeId,
        target: Tensor,
        weight: Tensor,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients of one backward pass. A node has a gradient iff it required one.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    /// Inserts a leaf value. Only leaves with `requires_grad` (and nodes
    /// reachable from them) accumulate gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Same-padded strided convolution. x: [IC, H, W], kernel:
    /// [OC, IC, KH, KW], bias: [OC]. Output [OC, ceil(H/s), ceil(W/s)].
    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
    ) -> Result<NodeId> {
        let (ic, h, w) = self.value(x).chw()?;
        let kshape = self.value(kernel).shape().to_vec();
        let [oc, kic, kh, kw] = match kshape.as_slice() {
            [a, b, c, d] => [*a, *b, *c, *d],
            other => {
                return Err(NnError::shape(
                    "conv2d",
                    format!("kernel must be [OC, IC, KH, KW], got {other:?}"),
                ))
            }
        };
        if kic != ic {
            return Err(NnError::shape(
                "conv2d",
                format!("kernel expects {kic} input channels, input has {ic}"),
            ));
        }
        if stride == 0 {
            return Err(NnError::shape("conv2d", "stride must be ≥ 1"));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [oc] {
                return Err(NnError::shape(
                    "conv2d",
                    format!("bias must be [{oc}], got {:?}", self.value(b).shape()),
                ));
            }
        }
        let (out, col) = kernels::conv_forward(
            self.value(x).data(),
            ic,
            h,
            w,
            self.value(kernel).data(),
            oc,
            kh,
            kw,
            stride,
            bias.map(|b| self.value(b).data()),
        );
        let (oh, _) = kernels::conv_extent(h, kh, stride);
        let (ow, _) = kernels::conv_extent(w, kw, stride);
        let requires =
            self.requires(x) || self.requires(kernel) || bias.is_some_and(|b| self.requires(b));
        let value = Tensor::new(vec![oc, oh, ow], out)?;
        Ok(self.push(
            value,
            requires,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                col: Arc::new(col),
            },
        ))
    }

    /// Transposed convolution (the conv adjoint): x: [CI, H, W], kernel
    /// [CI, CO, KH, KW], output [CO, s·H, s·W].
    pub fn transposed_conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: usize,
    ) -> Result<NodeId> {
        let (ci, h, w) = self.value(x).chw()?;
        let kshape = self.value(kernel).shape().to_vec();
        let [kci, co, kh, kw] = match kshape.as_slice() {
            [a, b, c, d] => [*a, *b, *c, *d],
            other => {
                return Err(NnError::shape(
                    "transposed_conv2d",
                    format!("kernel must be [CI, CO, KH, KW], got {other:?}"),
                ))
            }
        };
        if kci != ci {
            return Err(NnError::shape(
                "transposed_conv2d",
                format!("kernel expects {kci} input channels, input has {ci}"),
            ));
        }
        if stride == 0 {
            return Err(NnError::shape("transposed_conv2d", "stride must be ≥ 1"));
        }
        let (out_h, out_w) = (h * stride, w * stride);
        // The adjoint of conv([CO, s·H, s·W] → [CI, H, W]).
        let mut out = kernels::conv_dinput(
            self.value(x).data(),
            self.value(kernel).data(),
            co,
            out_h,
            out_w,
            ci,
            kh,
            kw,
            stride,
        );
        if let Some(b) = bias {
            if self.value(b).shape() != [co] {
                return Err(NnError::shape(
                    "transposed_conv2d",
                    format!("bias must be [{co}], got {:?}", self.value(b).shape()),
                ));
            }
            let n = out_h * out_w;
            for (c, bv) in self.value(b).data().iter().enumerate() {
                for v in &mut out[c * n..(c + 1) * n] {
                    *v += bv;
                }
            }
        }
        let requires =
            self.requires(x) || self.requires(kernel) || bias.is_some_and(|b| self.requires(b));
        let value = Tensor::new(vec![co, out_h, out_w], out)?;
        Ok(self.push(
            value,
            requires,
            Op::TConv2d {
                x,
                kernel,
                bias,
                stride,
            },
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("add", a, b)?;
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(value, requires, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same("mul", a, b)?;
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(value, requires, Op::Mul(a, b)))
    }

    fn check_same(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::shape(
                op,
                format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f32> = self
            .value(x)
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let requires = self.requires(x);
        self.push(value, requires, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f32> = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let requires = self.requires(x);
        self.push(value, requires, Op::Tanh(x))
    }

    /// Concatenates along the channel axis: [Ca, H, W] ⧺ [Cb, H, W].
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(NnError::shape(
                "concat_channels",
                format!("spatial {ha}×{wa} vs {hb}×{wb}"),
            ));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(vec![ca + cb, ha, wa], data)?;
        let requires = self.requires(a) || self.requires(b);
        Ok(self.push(value, requires, Op::ConcatChannels(a, b)))
    }

    /// Channel slice [from, to) of a [C, H, W] tensor.
    pub fn slice_channels(&mut self, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let (c, h, w) = self.value(x).chw()?;
        if from >= to || to > c {
            return Err(NnError::shape(
                "slice_channels",
                format!("[{from}, {to}) out of {c} channels"),
            ));
        }
        let data = self.value(x).data()[from * h * w..to * h * w].to_vec();
        let value = Tensor::new(vec![to - from, h, w], data)?;
        let requires = self.requires(x);
        Ok(self.push(value, requires, Op::SliceChannels { x, from, to }))
    }

    /// Inverted dropout: keeps activations with probability 1−rate and
    /// scales them by 1/(1−rate). Identity when `train` is off.
    pub fn dropout(&mut self, x: NodeId, rate: f32, train: bool, seed: u64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::shape("dropout", format!("rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            // Identity; recorded as scale(1) to keep the graph connected.
            return Ok(self.scale(x, 1.0));
        }
        let keep = 1.0 - rate;
        let inv = 1.0 / keep;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask_data: Vec<f32> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f32>() < keep { inv } else { 0.0 })
            .collect();
        let mask = Tensor::new(self.value(x).shape().to_vec(), mask_data)?;
        let data: Vec<f32> = self
            .value(x)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let requires = self.requires(x);
        Ok(self.push(value, requires, Op::Dropout { x, mask }))
    }

    pub fn scale(&mut self, x: NodeId, factor: f32) -> NodeId {
        let data: Vec<f32> = self.value(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let requires = self.requires(x);
        self.push(value, requires, Op::Scale { x, factor })
    }

    /// Sum of all elements → scalar [1].
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().map(|v| *v as f64).sum();
        let requires = self.requires(x);
        self.push(Tensor::scalar(total as f32), requires, Op::Sum(x))
    }

    /// Mean over all cells of `weight · huber_δ(target − x)` → scalar.
    /// Target and weight are constants (not differentiated).
    pub fn weighted_huber_mean(
        &mut self,
        x: NodeId,
        target: &Tensor,
        weight: &Tensor,
        delta: f32,
    ) -> Result<NodeId> {
        if target.shape() != self.value(x).shape() || weight.shape() != self.value(x).shape() {
            return Err(NnError::shape(
                "weighted_huber_mean",
                format!(
                    "pred {:?}, target {:?}, weight {:?}",
                    self.value(x).shape(),
                    target.shape(),
                    weight.shape()
                ),
            ));
        }
        let n = self.value(x).numel() as f64;
        let d = delta as f64;
        let mut acc = 0.0f64;
        for ((p, t), w) in self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .zip(weight.data())
        {
            let e = (*t as f64) - (*p as f64);
            let huber = if e.abs() <= d {
                0.5 * e * e
            } else {
                d * e.abs() - 0.5 * d * d
            };
            acc += (*w as f64) * huber;
        }
        let requires = self.requires(x);
        Ok(self.push(
            Tensor::scalar((acc / n) as f32),
            requires,
            Op::WeightedHuberMean {
                x,
                target: target.clone(),
                weight: weight.clone(),
                delta,
            },
        ))
    }

    /// Mean over all cells of `0.5 · weight · (target − x)²` → scalar.
    pub fn weighted_sq_mean(
        &mut self,
        x: NodeId,
        target: &Tensor,
        weight: &Tensor,
    ) -> Result<NodeId> {
        if target.shape() != self.value(x).shape() || weight.shape() != self.value(x).shape() {
            return Err(NnError::shape(
                "weighted_sq_mean",
                format!(
                    "pred {:?}, target {:?}, weight {:?}",
                    self.value(x).shape(),
                    target.shape(),
                    weight.shape()
                ),
            ));
        }
        let n = self.value(x).numel() as f64;
        let mut acc = 0.0f64;
        for ((p, t), w) in self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .zip(weight.data())
        {
            let e = (*t as f64) - (*p as f64);
            acc += 0.5 * (*w as f64) * e * e;
        }
        let requires = self.requires(x);
        Ok(self.push(
            Tensor::scalar((acc / n) as f32),
            requires,
            Op::WeightedSqMean {
                x,
                target: target.clone(),
                weight: weight.clone(),
            },
        ))
    }

    /// Reverse pass from a scalar loss. Consumes the graph; gradient buffers
    /// exist exactly for the nodes that required them.
    pub fn backward(self, loss: NodeId) -> Result<Grads> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(NnError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(grad_out) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(grad_out);
                    continue;
                }
                Op::Conv2d {
                    x,
                    kernel,
                    bias,
                    stride,
                    col,
                } => {
                    let (ic, h, w) = self.nodes[x.0].value.chw()?;
                    let ks = self.nodes[kernel.0].value.shape();
                    let (oc, kh, kw) = (ks[0], ks[2], ks[3]);
                    let n = node.value.shape()[1] * node.value.shape()[2];
                    if self.requires(*kernel) {
                        let dk = kernels::conv_dkernel(&grad_out, col, oc, ic * kh * kw, n);
                        accumulate(&mut grads[kernel.0], dk);
                    }
                    if self.requires(*x) {
                        let dx = kernels::conv_dinput(
                            &grad_out,
                            self.nodes[kernel.0].value.data(),
                            ic,
                            h,
                            w,
                            oc,
                            kh,
                            kw,
                            *stride,
                        );
                        accumulate(&mut grads[x.0], dx);
                    }
                    if let Some(b) = bias {
                        if self.requires(*b) {
                            accumulate(&mut grads[b.0], kernels::bias_grad(&grad_out, oc, n));
                        }
                    }
                }
                Op::TConv2d {
                    x,
                    kernel,
                    bias,
                    stride,
                } => {
                    let (ci, h, w) = self.nodes[x.0].value.chw()?;
                    let ks = self.nodes[kernel.0].value.shape();
                    let (co, kh, kw) = (ks[1], ks[2], ks[3]);
                    let (out_h, out_w) = (h * stride, w * stride);
                    if self.requires(*x) {
                        // Adjoint of the adjoint: plain forward conv of the
                        // upstream gradient.
                        let (dx, _) = kernels::conv_forward(
                            &grad_out,
                            co,
                            out_h,
                            out_w,
                            self.nodes[kernel.0].value.data(),
                            ci,
                            kh,
                            kw,
                            *stride,
                            None,
                        );
                        accumulate(&mut grads[x.0], dx);
                    }
                    if self.requires(*kernel) {
                        let col = kernels::im2col(&grad_out, co, out_h, out_w, kh, kw, *stride);
                        let n = h * w;
                        let dk = kernels::conv_dkernel(
                            self.nodes[x.0].value.data(),
                            &col,
                            ci,
                            co * kh * kw,
                            n,
                        );
                        accumulate(&mut grads[kernel.0], dk);
                    }
                    if let Some(b) = bias {
                        if self.requires(*b) {
                            accumulate(
                                &mut grads[b.0],
                                kernels::bias_grad(&grad_out, co, out_h * out_w),
                            );
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.requires(*a) {
                        accumulate(&mut grads[a.0], grad_out.clone());
                    }
                    if self.requires(*b) {
                        accumulate(&mut grads[b.0], grad_out);
                    }
                }
                Op::Mul(a, b) => {
                    if self.requires(*a) {
                        let da: Vec<f32> = grad_out
                            .iter()
                            .zip(self.nodes[b.0].value.data())
                            .map(|(g, v)| g * v)
                            .collect();
                        accumulate(&mut grads[a.0], da);
                    }
                    if self.requires(*b) {
                        let db: Vec<f32> = grad_out
                            .iter()
                            .zip(self.nodes[a.0].value.data())
                            .map(|(g, v)| g * v)
                            .collect();
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f32> = grad_out
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Tanh(x) => {
                    let dx: Vec<f32> = grad_out
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::ConcatChannels(a, b) => {
                    let na = self.nodes[a.0].value.numel();
                    if self.requires(*a) {
                        accumulate(&mut grads[a.0], grad_out[..na].to_vec());
                    }
                    if self.requires(*b) {
                        accumulate(&mut grads[b.0], grad_out[na..].to_vec());
                    }
                }
                Op::SliceChannels { x, from, to } => {
                    let (_, h, w) = self.nodes[x.0].value.chw()?;
                    let mut dx = vec![0.0f32; self.nodes[x.0].value.numel()];
                    dx[from * h * w..to * h * w].copy_from_slice(&grad_out);
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Dropout { x, mask } => {
                    let dx: Vec<f32> = grad_out
                        .iter()
                        .zip(mask.data())
                        .map(|(g, m)| g * m)
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f32> = grad_out.iter().map(|g| g * factor).collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Sum(x) => {
                    let g = grad_out[0];
                    accumulate(&mut grads[x.0], vec![g; self.nodes[x.0].value.numel()]);
                }
                Op::WeightedHuberMean {
                    x,
                    target,
                    weight,
                    delta,
                } => {
                    let g = grad_out[0];
                    let n = self.nodes[x.0].value.numel() as f32;
                    let d = *delta;
                    let dx: Vec<f32> = self.nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(weight.data())
                        .map(|((p, t), w)| {
                            let e = t - p;
                            let de = if e.abs() <= d { e } else { d * e.signum() };
                            // dL/dp = −w·huber'(e)/n
                            -g * w * de / n
                        })
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
                Op::WeightedSqMean { x, target, weight } => {
                    let g = grad_out[0];
                    let n = self.nodes[x.0].value.numel() as f32;
                    let dx: Vec<f32> = self.nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(weight.data())
                        .map(|((p, t), w)| -g * w * (t - p) / n)
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
            }
        }

        let nodes = self.nodes;
        let grads = grads
            .into_iter()
            .zip(&nodes)
            .map(|(g, node)| {
                g.map(|data| Tensor::new(node.value.shape().to_vec(), data).unwrap())
            })
            .collect();
        Ok(Grads { grads })
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, grad: Vec<f32>) {
    match slot {
        Some(existing) => {
            for (e, g) in existing.iter_mut().zip(grad) {
                *e += g;
            }
        }
        None => *slot = Some(grad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap(), true);
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap(), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2, 2]), true);
        let y = g.scale(x, 2.0);
        assert!(matches!(g.backward(y), Err(NnError::NonScalarLoss(_))));
    }

    #[test]
    fn sigmoid_tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![1]), false);
        let s = g.sigmoid(x);
        let t = g.tanh(x);
        assert_eq!(g.value(s).item(), 0.5);
        assert_eq!(g.value(t).item(), 0.0);
    }

    #[test]
    fn conv_shape_examples() {
        let mut g = Graph::new();
        // 1×1 kernel [1] stride 1 is the identity map.
        let x = g.leaf(Tensor::new(vec![1, 3, 3], (0..9).map(|i| i as f32).collect()).unwrap(), false);
        let k = g.leaf(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(), false);
        let y = g.conv2d(x, k, None, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        // 6×6 input, stride 3, same padding → 2×2 spatial.
        let x6 = g.leaf(Tensor::zeros(vec![1, 6, 6]), false);
        let k3 = g.leaf(Tensor::zeros(vec![4, 1, 3, 3]), false);
        let y6 = g.conv2d(x6, k3, None, 3).unwrap();
        assert_eq!(g.value(y6).shape(), &[4, 2, 2]);
    }

    #[test]
    fn shape_mismatch_reports_op() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![2, 2]), false);
        let b = g.leaf(Tensor::zeros(vec![3]), false);
        match g.add(a, b) {
            Err(NnError::Shape { op, .. }) => assert_eq!(op, "add"),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![8], (0..8).map(|i| i as f32).collect()).unwrap(), false);
        let y = g.dropout(x, 0.5, false, 7).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn dropout_train_scales_kept() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(vec![1000], 1.0), false);
        let y = g.dropout(x, 0.25, true, 3).unwrap();
        for v in g.value(y).data() {
            assert!(*v == 0.0 || (*v - 1.0 / 0.75).abs() < 1e-6);
        }
        // Deterministic under the same seed.
        let mut g2 = Graph::new();
        let x2 = g2.leaf(Tensor::full(vec![1000], 1.0), false);
        let y2 = g2.dropout(x2, 0.25, true, 3).unwrap();
        assert_eq!(g.value(y).data(), g2.value(y2).data());
    }

    #[test]
    fn concat_slice_round_trip() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), true);
        let b = g.leaf(Tensor::new(vec![2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap(), false);
        let cat = g.concat_channels(a, b).unwrap();
        assert_eq!(g.value(cat).shape(), &[3, 2, 2]);
        let back = g.slice_channels(cat, 0, 1).unwrap();
        assert_eq!(g.value(back).data(), g.value(a).data());
        let loss = g.sum(back);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn inputs_not_mutated() {
        let mut g = Graph::new();
        let data: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let t = Tensor::new(vec![1, 4, 4], data.clone()).unwrap();
        let x = g.leaf(t.clone(), true);
        let k = g.leaf(Tensor::full(vec![2, 1, 3, 3], 0.5), true);
        let y = g.conv2d(x, k, None, 2).unwrap();
        let s = g.sigmoid(y);
        let loss = g.sum(s);
        let _ = g.backward(loss).unwrap();
        assert_eq!(t.data(), data.as_slice());
    }
}
