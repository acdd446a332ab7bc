//! Define-by-run reverse-mode automatic differentiation.
//!
//! A `Graph` records every executed operation as an appended node, so node
//! ids are already a topological order. A fresh graph is built per training
//! step; `backward` overwrites leaf gradients (no cross-call accumulation).

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Scalar, Tensor};

pub type NodeId = usize;

/// Padding mode for convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding chosen so stride-1 output matches input size
    /// (requires kernel and stride of equal parity).
    Same,
    Valid,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// a * x + b, elementwise with scalar coefficients; only the
    /// multiplier matters to the backward pass.
    Affine {
        x: NodeId,
        a: S,
    },
    Abs(NodeId),
    Log(NodeId),
    ClampMin {
        x: NodeId,
        min: S,
    },
    LeakyRelu {
        x: NodeId,
        alpha: S,
    },
    Sigmoid(NodeId),
    /// Row-wise softmax of a (rows, cols) tensor.
    SoftmaxRows(NodeId),
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    /// (rows, cols) + (cols,) broadcast over rows.
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Row sums of a (rows, cols) tensor -> (rows,).
    SumRows(NodeId),
    /// Spatial mean of a (b, c, h, w) tensor -> (b, c).
    MeanSpatial(NodeId),
    ConcatCh(Vec<NodeId>),
    SliceCh {
        x: NodeId,
        start: usize,
        len: usize,
    },
    Reshape(NodeId),
    PadReflect {
        x: NodeId,
        pad: usize,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: kernels::ConvGeom,
    },
    ConvT2 {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    AvgPool2(NodeId),
    InstanceNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: S,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.leaf(value, false)
    }

    /// New non-differentiable leaf carrying the same value.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.clone();
        self.leaf(v, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.nodes[id].grad.as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        self.nodes.len() - 1
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(Error::shape(
                op,
                self.nodes[a].value.shape(),
                self.nodes[b].value.shape(),
            ));
        }
        Ok(())
    }

    // ── Elementwise and scalar ops ──────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data: Vec<S> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<S> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| *x * *y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("div", a, b)?;
        let data: Vec<S> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| *x / *y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Div(a, b), rg))
    }

    pub fn affine(&mut self, x: NodeId, a: S, b: S) -> NodeId {
        let value = self.nodes[x].value.map(|v| a * v + b);
        let rg = self.nodes[x].requires_grad;
        self.push(value, Op::Affine { x, a }, rg)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -S::one(), S::zero())
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.mul(x, x)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(|v| v.abs());
        let rg = self.nodes[x].requires_grad;
        self.push(value, Op::Abs(x), rg)
    }

    /// Natural log; caller guarantees strictly positive input
    /// (loss paths clamp first).
    pub fn log(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.map(|v| v.ln());
        let rg = self.nodes[x].requires_grad;
        self.push(value, Op::Log(x), rg)
    }

    pub fn clamp_min(&mut self, x: NodeId, min: S) -> NodeId {
        let value = self.nodes[x].value.map(|v| v.max(min));
        let rg = self.nodes[x].requires_grad;
        self.push(value, Op::ClampMin { x, min }, rg)
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: S) -> NodeId {
        let value = self.nodes[x]
            .value
            .map(|v| if v >= S::zero() { v } else { alpha * v });
        let rg = self.nodes[x].requires_grad;
        self.push(value, Op::LeakyRelu { x, alpha }, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x]
            .value
            .map(|v| S::one() / (S::one() + (-v).exp()));
        let rg = self.nodes[x].requires_grad;
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Numerically stabilized row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.nodes[x].value.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::invalid(
                "softmax",
                format!("expected rank-2 input, got {shape:?}"),
            ));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let xv = self.nodes[x].value.data();
        let mut data = vec![S::zero(); rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..][..cols];
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for c in 0..cols {
                let e = (row[c] - max).exp();
                data[r * cols + c] = e;
                sum = sum + e;
            }
            for c in 0..cols {
                data[r * cols + c] = data[r * cols + c] / sum;
            }
        }
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Tensor::new(shape, data)?, Op::SoftmaxRows(x), rg))
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a].value.shape().to_vec();
        let sb = self.nodes[b].value.shape().to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.nodes[a].value.data(), self.nodes[b].value.data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::Matmul { a, b }, rg))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.nodes[x].value.shape().to_vec();
        let sb = self.nodes[bias].value.shape().to_vec();
        if sx.len() != 2 || sb.len() != 1 || sb[0] != sx[1] {
            return Err(Error::shape("add_bias", &sx, &sb));
        }
        let cols = sx[1];
        let bv = self.nodes[bias].value.data();
        let data: Vec<S> = self.nodes[x]
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| *v + bv[i % cols])
            .collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(sx, data)?, Op::AddBias { x, bias }, rg))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: S = self.nodes[x].value.data().iter().cloned().sum();
        let rg = self.nodes[x].requires_grad;
        self.push(Tensor::scalar_value(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = S::of_f64(self.nodes[x].value.numel() as f64);
        let s: S = self.nodes[x].value.data().iter().cloned().sum();
        let rg = self.nodes[x].requires_grad;
        self.push(Tensor::scalar_value(s / n), Op::MeanAll(x), rg)
    }

    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.nodes[x].value.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::invalid(
                "sum_rows",
                format!("expected rank-2 input, got {shape:?}"),
            ));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let xv = self.nodes[x].value.data();
        let data: Vec<S> = (0..rows)
            .map(|r| xv[r * cols..][..cols].iter().cloned().sum())
            .collect();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Tensor::new(vec![rows], data)?, Op::SumRows(x), rg))
    }

    /// Global average pool: (b, c, h, w) -> (b, c).
    pub fn mean_spatial(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, c, h, w) = self.nodes[x].value.dims4()?;
        let hw = h * w;
        let n = S::of_f64(hw as f64);
        let xv = self.nodes[x].value.data();
        let data: Vec<S> = (0..b * c)
            .map(|s| xv[s * hw..][..hw].iter().cloned().sum::<S>() / n)
            .collect();
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(Tensor::new(vec![b, c], data)?, Op::MeanSpatial(x), rg))
    }

    // ── Structural ops ──────────────────────────────────────────────

    /// Depth-wise concatenation of rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat_channels", "empty input list"));
        }
        let (b0, _, h0, w0) = self.nodes[inputs[0]].value.dims4()?;
        let mut total_c = 0;
        for &id in inputs {
            let (b, c, h, w) = self.nodes[id].value.dims4()?;
            if (b, h, w) != (b0, h0, w0) {
                return Err(Error::shape(
                    "concat_channels",
                    self.nodes[inputs[0]].value.shape(),
                    self.nodes[id].value.shape(),
                ));
            }
            total_c += c;
        }
        let hw = h0 * w0;
        let mut data = Vec::with_capacity(b0 * total_c * hw);
        for bi in 0..b0 {
            for &id in inputs {
                let c = self.nodes[id].value.shape()[1];
                let src = &self.nodes[id].value.data()[bi * c * hw..][..c * hw];
                data.extend_from_slice(src);
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::new(vec![b0, total_c, h0, w0], data)?,
            Op::ConcatCh(inputs.to_vec()),
            rg,
        ))
    }

    /// Channels [start, start+len) of a rank-4 tensor.
    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let value = self.nodes[x].value.slice_channels(start, len)?;
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(value, Op::SliceCh { x, start, len }, rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.nodes[x].value.reshaped(shape)?;
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn pad_reflect(&mut self, x: NodeId, pad: usize) -> Result<NodeId> {
        let (b, c, h, w) = self.nodes[x].value.dims4()?;
        if pad > h || pad > w {
            return Err(Error::invalid(
                "pad_reflect",
                format!("pad {pad} exceeds spatial dims {h}x{w}"),
            ));
        }
        let data = kernels::pad_reflect_forward(self.nodes[x].value.data(), b * c, h, w, pad);
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            Tensor::new(vec![b, c, h + 2 * pad, w + 2 * pad], data)?,
            Op::PadReflect { x, pad },
            rg,
        ))
    }

    // ── Spatial layers ──────────────────────────────────────────────

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let (batch, in_ch, in_h, in_w) = self.nodes[x].value.dims4()?;
        let ws = self.nodes[w].value.shape().to_vec();
        if ws.len() != 4 {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel must be rank 4 (out,in,kh,kw), got {ws:?}"),
            ));
        }
        let (out_ch, k_in, k_h, k_w) = (ws[0], ws[1], ws[2], ws[3]);
        if k_in != in_ch {
            return Err(Error::shape("conv2d", self.nodes[x].value.shape(), &ws));
        }
        if self.nodes[b].value.shape() != [out_ch] {
            return Err(Error::shape("conv2d bias", &[out_ch], self.nodes[b].value.shape()));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        let pad = match padding {
            Padding::Valid => 0,
            Padding::Same => {
                if k_h != k_w {
                    return Err(Error::invalid("conv2d", "same padding requires square kernels"));
                }
                if (k_h + stride) % 2 != 0 {
                    return Err(Error::invalid(
                        "conv2d",
                        format!("same padding undefined for kernel {k_h} with stride {stride}"),
                    ));
                }
                (k_h - stride).div_euclid(2)
            }
        };
        if in_h + 2 * pad < k_h || in_w + 2 * pad < k_w {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {k_h}x{k_w} larger than padded input {in_h}x{in_w}"),
            ));
        }
        let geom = kernels::ConvGeom {
            batch,
            in_ch,
            out_ch,
            in_h,
            in_w,
            k_h,
            k_w,
            stride,
            pad,
        };
        let data = kernels::conv2d_forward(
            self.nodes[x].value.data(),
            self.nodes[w].value.data(),
            self.nodes[b].value.data(),
            geom,
        );
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::new(vec![batch, out_ch, geom.out_h(), geom.out_w()], data)?,
            Op::Conv2d { x, w, b, geom },
            rg,
        ))
    }

    /// Transposed convolution, kernel 2x2 stride 2: exactly doubles H and W.
    pub fn conv2d_transpose(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (batch, in_ch, h, wd) = self.nodes[x].value.dims4()?;
        let ws = self.nodes[w].value.shape().to_vec();
        if ws.len() != 4 || ws[2] != 2 || ws[3] != 2 {
            return Err(Error::invalid(
                "conv2d_transpose",
                format!("kernel must be (out,in,2,2), got {ws:?}"),
            ));
        }
        let (out_ch, k_in) = (ws[0], ws[1]);
        if k_in != in_ch {
            return Err(Error::shape("conv2d_transpose", self.nodes[x].value.shape(), &ws));
        }
        if self.nodes[b].value.shape() != [out_ch] {
            return Err(Error::shape(
                "conv2d_transpose bias",
                &[out_ch],
                self.nodes[b].value.shape(),
            ));
        }
        let data = kernels::convt2_forward(
            self.nodes[x].value.data(),
            self.nodes[w].value.data(),
            self.nodes[b].value.data(),
            batch,
            in_ch,
            out_ch,
            h,
            wd,
        );
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            Tensor::new(vec![batch, out_ch, 2 * h, 2 * wd], data)?,
            Op::ConvT2 { x, w, b },
            rg,
        ))
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, c, h, w) = self.nodes[x].value.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(
                "avg_pool2",
                format!("spatial dims must be even, got {h}x{w}"),
            ));
        }
        let data = kernels::avg_pool2_forward(self.nodes[x].value.data(), b * c, h, w);
        let rg = self.nodes[x].requires_grad;
        Ok(self.push(
            Tensor::new(vec![b, c, h / 2, w / 2], data)?,
            Op::AvgPool2(x),
            rg,
        ))
    }

    /// Per-(batch, channel) normalization to zero mean and unit variance,
    /// then the per-channel affine scale/shift.
    pub fn instance_norm(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: S,
    ) -> Result<NodeId> {
        let (b, c, h, w) = self.nodes[x].value.dims4()?;
        if self.nodes[scale].value.shape() != [c] || self.nodes[shift].value.shape() != [c] {
            return Err(Error::shape(
                "instance_norm affine",
                &[c],
                self.nodes[scale].value.shape(),
            ));
        }
        let hw = h * w;
        let n = S::of_f64(hw as f64);
        let xv = self.nodes[x].value.data();
        let sv = self.nodes[scale].value.data();
        let tv = self.nodes[shift].value.data();
        let mut data = vec![S::zero(); xv.len()];
        for s in 0..b * c {
            let ch = s % c;
            let xs = &xv[s * hw..][..hw];
            let mean: S = xs.iter().cloned().sum::<S>() / n;
            let var: S = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let inv_std = S::one() / (var + eps).sqrt();
            let out = &mut data[s * hw..][..hw];
            for (o, &v) in out.iter_mut().zip(xs) {
                *o = sv[ch] * ((v - mean) * inv_std) + tv[ch];
            }
        }
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(
            Tensor::new(vec![b, c, h, w], data)?,
            Op::InstanceNorm { x, scale, shift, eps },
            rg,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Populates `grad` on every `requires_grad` node reachable from `loss`.
    /// Gradients from previous calls are overwritten, not accumulated.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.nodes[loss].value.shape().to_vec(),
            });
        }
        if !self.nodes[loss].requires_grad {
            return Err(Error::DetachedLoss);
        }
        for node in &mut self.nodes {
            node.grad = if node.requires_grad {
                Some(vec![S::zero(); node.value.numel()])
            } else {
                None
            };
        }
        self.nodes[loss].grad = Some(vec![S::one()]);

        for i in (0..=loss).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let grad = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &grad, &op);
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn acc(&mut self, id: NodeId, contrib: impl Iterator<Item = S>) {
        if let Some(g) = self.nodes[id].grad.as_mut() {
            for (gv, cv) in g.iter_mut().zip(contrib) {
                *gv = *gv + cv;
            }
        }
    }

    fn acc_slice(&mut self, id: NodeId, contrib: &[S]) {
        if let Some(g) = self.nodes[id].grad.as_mut() {
            for (gv, cv) in g.iter_mut().zip(contrib) {
                *gv = *gv + *cv;
            }
        }
    }

    fn propagate(&mut self, out: NodeId, grad: &[S], op: &Op<S>) {
        match *op {
            Op::Leaf => {}

            Op::Add(a, b) => {
                self.acc_slice(a, grad);
                self.acc_slice(b, grad);
            }

            Op::Mul(a, b) => {
                if self.nodes[a].requires_grad {
                    let contrib: Vec<S> = grad
                        .iter()
                        .zip(self.nodes[b].value.data())
                        .map(|(g, v)| *g * *v)
                        .collect();
                    self.acc_slice(a, &contrib);
                }
                if self.nodes[b].requires_grad {
                    let contrib: Vec<S> = grad
                        .iter()
                        .zip(self.nodes[a].value.data())
                        .map(|(g, v)| *g * *v)
                        .collect();
                    self.acc_slice(b, &contrib);
                }
            }

            Op::Div(a, b) => {
                if self.nodes[a].requires_grad {
                    let contrib: Vec<S> = grad
                        .iter()
                        .zip(self.nodes[b].value.data())
                        .map(|(g, v)| *g / *v)
                        .collect();
                    self.acc_slice(a, &contrib);
                }
                if self.nodes[b].requires_grad {
                    let contrib: Vec<S> = grad
                        .iter()
                        .zip(self.nodes[a].value.data().iter().zip(self.nodes[b].value.data()))
                        .map(|(g, (av, bv))| -*g * *av / (*bv * *bv))
                        .collect();
                    self.acc_slice(b, &contrib);
                }
            }

            Op::Affine { x, a } => {
                let contrib: Vec<S> = grad.iter().map(|g| *g * a).collect();
                self.acc_slice(x, &contrib);
            }

            Op::Abs(x) => {
                // subgradient 0 at the kink
                let contrib: Vec<S> = grad
                    .iter()
                    .zip(self.nodes[x].value.data())
                    .map(|(g, v)| {
                        if *v > S::zero() {
                            *g
                        } else if *v < S::zero() {
                            -*g
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                self.acc_slice(x, &contrib);
            }

            Op::Log(x) => {
                let contrib: Vec<S> = grad
                    .iter()
                    .zip(self.nodes[x].value.data())
                    .map(|(g, v)| *g / *v)
                    .collect();
                self.acc_slice(x, &contrib);
            }

            Op::ClampMin { x, min } => {
                let contrib: Vec<S> = grad
                    .iter()
                    .zip(self.nodes[x].value.data())
                    .map(|(g, v)| if *v > min { *g } else { S::zero() })
                    .collect();
                self.acc_slice(x, &contrib);
            }

            Op::LeakyRelu { x, alpha } => {
                // subgradient at 0 defined as 1
                let contrib: Vec<S> = grad
                    .iter()
                    .zip(self.nodes[x].value.data())
                    .map(|(g, v)| if *v >= S::zero() { *g } else { *g * alpha })
                    .collect();
                self.acc_slice(x, &contrib);
            }

            Op::Sigmoid(x) => {
                let contrib: Vec<S> = grad
                    .iter()
                    .zip(self.nodes[out].value.data())
                    .map(|(g, s)| *g * *s * (S::one() - *s))
                    .collect();
                self.acc_slice(x, &contrib);
            }

            Op::SoftmaxRows(x) => {
                let shape = self.nodes[out].value.shape();
                let (rows, cols) = (shape[0], shape[1]);
                let sv = self.nodes[out].value.data();
                let mut contrib = vec![S::zero(); rows * cols];
                for r in 0..rows {
                    let s = &sv[r * cols..][..cols];
                    let g = &grad[r * cols..][..cols];
                    let dot: S = s.iter().zip(g).map(|(a, b)| *a * *b).sum();
                    for c in 0..cols {
                        contrib[r * cols + c] = s[c] * (g[c] - dot);
                    }
                }
                self.acc_slice(x, &contrib);
            }

            Op::Matmul { a, b } => {
                let sa = self.nodes[a].value.shape().to_vec();
                let sb = self.nodes[b].value.shape().to_vec();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a].requires_grad {
                    // dA = grad @ B^T
                    let bv = self.nodes[b].value.data();
                    let mut bt = vec![S::zero(); n * k];
                    for i in 0..k {
                        for j in 0..n {
                            bt[j * k + i] = bv[i * n + j];
                        }
                    }
                    let da = kernels::matmul(grad, &bt, m, n, k);
                    self.acc_slice(a, &da);
                }
                if self.nodes[b].requires_grad {
                    // dB = A^T @ grad
                    let av = self.nodes[a].value.data();
                    let mut at = vec![S::zero(); k * m];
                    for i in 0..m {
                        for j in 0..k {
                            at[j * m + i] = av[i * k + j];
                        }
                    }
                    let db = kernels::matmul(&at, grad, k, m, n);
                    self.acc_slice(b, &db);
                }
            }

            Op::AddBias { x, bias } => {
                self.acc_slice(x, grad);
                if self.nodes[bias].requires_grad {
                    let cols = self.nodes[bias].value.numel();
                    let mut db = vec![S::zero(); cols];
                    for (i, g) in grad.iter().enumerate() {
                        db[i % cols] = db[i % cols] + *g;
                    }
                    self.acc_slice(bias, &db);
                }
            }

            Op::SumAll(x) => {
                let g = grad[0];
                let n = self.nodes[x].value.numel();
                self.acc(x, std::iter::repeat(g).take(n));
            }

            Op::MeanAll(x) => {
                let n = self.nodes[x].value.numel();
                let g = grad[0] / S::of_f64(n as f64);
                self.acc(x, std::iter::repeat(g).take(n));
            }

            Op::MeanSpatial(x) => {
                let (_, _, h, w) = self.nodes[x].value.dims4().expect("pool input rank");
                let hw = h * w;
                let inv = S::one() / S::of_f64(hw as f64);
                let mut contrib = vec![S::zero(); self.nodes[x].value.numel()];
                for (s, chunk) in contrib.chunks_mut(hw).enumerate() {
                    let g = grad[s] * inv;
                    chunk.fill(g);
                }
                self.acc_slice(x, &contrib);
            }

            Op::SumRows(x) => {
                let shape = self.nodes[x].value.shape();
                let (rows, cols) = (shape[0], shape[1]);
                let mut contrib = vec![S::zero(); rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        contrib[r * cols + c] = grad[r];
                    }
                }
                self.acc_slice(x, &contrib);
            }

            Op::ConcatCh(ref inputs) => {
                let (b, _, h, w) = self.nodes[out].value.dims4().expect("concat output rank");
                let out_c = self.nodes[out].value.shape()[1];
                let hw = h * w;
                let mut offset = 0;
                for &id in inputs {
                    let c = self.nodes[id].value.shape()[1];
                    if self.nodes[id].requires_grad {
                        let mut contrib = vec![S::zero(); b * c * hw];
                        for bi in 0..b {
                            let src = &grad[(bi * out_c + offset) * hw..][..c * hw];
                            contrib[bi * c * hw..][..c * hw].copy_from_slice(src);
                        }
                        self.acc_slice(id, &contrib);
                    }
                    offset += c;
                }
            }

            Op::SliceCh { x, start, len } => {
                let (b, c, h, w) = self.nodes[x].value.dims4().expect("slice input rank");
                let hw = h * w;
                if self.nodes[x].requires_grad {
                    let mut contrib = vec![S::zero(); b * c * hw];
                    for bi in 0..b {
                        let dst = &mut contrib[(bi * c + start) * hw..][..len * hw];
                        dst.copy_from_slice(&grad[bi * len * hw..][..len * hw]);
                    }
                    self.acc_slice(x, &contrib);
                }
            }

            Op::Reshape(x) => {
                self.acc_slice(x, grad);
            }

            Op::PadReflect { x, pad } => {
                let (b, c, h, w) = self.nodes[x].value.dims4().expect("pad input rank");
                let contrib = kernels::pad_reflect_grad(grad, b * c, h, w, pad);
                self.acc_slice(x, &contrib);
            }

            Op::Conv2d { x, w, b, geom } => {
                if self.nodes[x].requires_grad {
                    let dx = kernels::conv2d_grad_input(grad, self.nodes[w].value.data(), geom);
                    self.acc_slice(x, &dx);
                }
                if self.nodes[w].requires_grad || self.nodes[b].requires_grad {
                    let (dw, db) =
                        kernels::conv2d_grad_params(grad, self.nodes[x].value.data(), geom);
                    self.acc_slice(w, &dw);
                    self.acc_slice(b, &db);
                }
            }

            Op::ConvT2 { x, w, b } => {
                let (batch, in_ch, h, wd) = self.nodes[x].value.dims4().expect("convt input rank");
                let out_ch = self.nodes[w].value.shape()[0];
                if self.nodes[x].requires_grad {
                    let dx = kernels::convt2_grad_input(
                        grad,
                        self.nodes[w].value.data(),
                        batch,
                        in_ch,
                        out_ch,
                        h,
                        wd,
                    );
                    self.acc_slice(x, &dx);
                }
                if self.nodes[w].requires_grad || self.nodes[b].requires_grad {
                    let (dw, db) = kernels::convt2_grad_params(
                        grad,
                        self.nodes[x].value.data(),
                        batch,
                        in_ch,
                        out_ch,
                        h,
                        wd,
                    );
                    self.acc_slice(w, &dw);
                    self.acc_slice(b, &db);
                }
            }

            Op::AvgPool2(x) => {
                let (b, c, h, w) = self.nodes[x].value.dims4().expect("pool input rank");
                let contrib = kernels::avg_pool2_grad(grad, b * c, h, w);
                self.acc_slice(x, &contrib);
            }

            Op::InstanceNorm { x, scale, shift, eps } => {
                let (b, c, h, w) = self.nodes[x].value.dims4().expect("inorm input rank");
                let hw = h * w;
                let n = S::of_f64(hw as f64);
                let xv = self.nodes[x].value.data();
                let sv = self.nodes[scale].value.data();
                let mut dx = vec![S::zero(); xv.len()];
                let mut dscale = vec![S::zero(); c];
                let mut dshift = vec![S::zero(); c];
                for s in 0..b * c {
                    let ch = s % c;
                    let xs = &xv[s * hw..][..hw];
                    let gs = &grad[s * hw..][..hw];
                    let mean: S = xs.iter().cloned().sum::<S>() / n;
                    let var: S = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
                    let inv_std = S::one() / (var + eps).sqrt();

                    let mut sum_g = S::zero();
                    let mut sum_gx = S::zero();
                    for (&g, &v) in gs.iter().zip(xs) {
                        let xhat = (v - mean) * inv_std;
                        sum_g = sum_g + g;
                        sum_gx = sum_gx + g * xhat;
                    }
                    dscale[ch] = dscale[ch] + sum_gx;
                    dshift[ch] = dshift[ch] + sum_g;

                    if self.nodes[x].requires_grad {
                        let k = sv[ch] * inv_std / n;
                        let ds = &mut dx[s * hw..][..hw];
                        for ((d, &g), &v) in ds.iter_mut().zip(gs).zip(xs) {
                            let xhat = (v - mean) * inv_std;
                            *d = k * (n * g - sum_g - xhat * sum_gx);
                        }
                    }
                }
                if self.nodes[x].requires_grad {
                    self.acc_slice(x, &dx);
                }
                self.acc_slice(scale, &dscale);
                self.acc_slice(shift, &dshift);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_forward() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_shape_mismatch_names_op() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2]));
        let b = g.constant(Tensor::zeros(vec![3]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add"), "{err}");
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn mul_by_zeros_annihilates_value_and_grad() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1.0, -2.0, 3.0]), true);
        let z = g.constant(Tensor::zeros(vec![3]));
        let y = g.mul(x, z).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[4], &[1.0, 2.0, 3.0, 4.0]), true);
        let loss = g.sum_all(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_of_square_is_two_x() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1], &[3.0]), true);
        let y = g.square(x).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(
            g.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
        let c = g.constant(t(&[1], &[5.0]));
        assert!(matches!(g.backward(c), Err(Error::DetachedLoss)));
    }

    #[test]
    fn backward_overwrites_previous_grads() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true);
        let l1 = g.sum_all(x);
        g.backward(l1).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
        g.backward(l1).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad(a*L1 + b*L2) == a*grad(L1) + b*grad(L2)
        let build = |g: &mut Graph<f64>| {
            let x = g.leaf(t(&[3], &[0.4, -1.2, 2.0]), true);
            let sq = g.square(x).unwrap();
            let l1 = g.sum_all(sq);
            let ab = g.abs(x);
            let l2 = g.mean_all(ab);
            (x, l1, l2)
        };
        let (a, b) = (2.5, -0.75);

        let mut g1 = Graph::new();
        let (x1, l1, _) = build(&mut g1);
        g1.backward(l1).unwrap();
        let g_l1 = g1.grad(x1).unwrap().to_vec();

        let mut g2 = Graph::new();
        let (x2, _, l2) = build(&mut g2);
        g2.backward(l2).unwrap();
        let g_l2 = g2.grad(x2).unwrap().to_vec();

        let mut g3 = Graph::new();
        let (x3, l1, l2) = build(&mut g3);
        let sa = g3.affine(l1, a, 0.0);
        let sb = g3.affine(l2, b, 0.0);
        let total = g3.add(sa, sb).unwrap();
        g3.backward(total).unwrap();
        let g_combo = g3.grad(x3).unwrap().to_vec();

        for i in 0..3 {
            assert!((g_combo[i] - (a * g_l1[i] + b * g_l2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sums_to_one_and_shift_invariant() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 4], &[0.3, 0.3, 0.3, 0.3]));
        let s = g.softmax_rows(x).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 0.25).abs() < 1e-12);
        }

        let logits = [1.2, -0.4, 0.0, 2.2];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
        let a = g.constant(t(&[1, 4], &logits));
        let b = g.constant(t(&[1, 4], &shifted));
        let sa = g.softmax_rows(a).unwrap();
        let sb = g.softmax_rows(b).unwrap();
        for (x, y) in g.value(sa).data().iter().zip(g.value(sb).data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[0.0]));
        let s = g.sigmoid(x);
        assert!((g.value(s).data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn leaky_relu_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[5.0, -1.0]));
        let y = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(y).data(), &[5.0, -0.2]);
        let id = g.leaky_relu(x, 1.0);
        assert_eq!(g.value(id).data(), &[5.0, -1.0]);
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn(vec![1, 2, 4, 4], |i| i as f64));
        let b = g.constant(Tensor::from_fn(vec![1, 3, 4, 4], |i| 1000.0 + i as f64));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 5, 4, 4]);
        let ra = g.slice_channels(c, 0, 2).unwrap();
        let rb = g.slice_channels(c, 2, 3).unwrap();
        assert_eq!(g.value(ra).data(), g.value(a).data());
        assert_eq!(g.value(rb).data(), g.value(b).data());
    }

    #[test]
    fn instance_norm_constant_slice_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![1, 1, 4, 4], 0.7_f64));
        let scale = g.constant(Tensor::full(vec![1], 1.0));
        let shift = g.constant(Tensor::zeros(vec![1]));
        let y = g.instance_norm(x, scale, shift, 1e-5).unwrap();
        for &v in g.value(y).data() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn instance_norm_statistics() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(vec![2, 3, 5, 5], |i| {
            ((i * 2654435761) % 1000) as f64 / 250.0
        }));
        let scale = g.constant(Tensor::full(vec![3], 1.0));
        let shift = g.constant(Tensor::zeros(vec![3]));
        let y = g.instance_norm(x, scale, shift, 1e-9).unwrap();
        let d = g.value(y).data();
        for s in 0..6 {
            let sl = &d[s * 25..][..25];
            let mean: f64 = sl.iter().sum::<f64>() / 25.0;
            let var: f64 = sl.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn conv2d_same_preserves_shape_and_pool_transpose_restores() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(vec![1, 2, 8, 8], |i| (i % 13) as f64 * 0.1));
        let w = g.constant(Tensor::from_fn(vec![2, 2, 3, 3], |i| (i % 5) as f64 * 0.1));
        let b = g.constant(Tensor::zeros(vec![2]));
        let y = g.conv2d(x, w, b, 1, Padding::Same).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 8, 8]);

        let p = g.avg_pool2(x).unwrap();
        assert_eq!(g.value(p).shape(), &[1, 2, 4, 4]);
        let tw = g.constant(Tensor::from_fn(vec![2, 2, 2, 2], |i| i as f64 * 0.1));
        let tb = g.constant(Tensor::zeros(vec![2]));
        let up = g.conv2d_transpose(p, tw, tb).unwrap();
        assert_eq!(g.value(up).shape(), &[1, 2, 8, 8]);
    }

    #[test]
    fn avg_pool_rejects_odd_dims() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 1, 3, 4]));
        assert!(g.avg_pool2(x).is_err());
    }

    #[test]
    fn conv_channel_mismatch_is_descriptive() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 3, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![2, 4, 3, 3]));
        let b = g.constant(Tensor::zeros(vec![2]));
        let err = g.conv2d(x, w, b, 1, Padding::Same).unwrap_err().to_string();
        assert!(err.contains("conv2d"), "{err}");
    }
}
