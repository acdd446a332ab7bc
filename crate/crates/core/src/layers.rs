//! Parameterized layers: named parameter storage, reproducible
//! initialization, and graph-level wrappers used by the model builders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Padding};
use crate::tensor::{Scalar, Tensor};

/// One named parameter tensor.
#[derive(Clone)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
    pub trainable: bool,
}

/// Index of a parameter within its owning `ParamSet`.
pub type ParamId = usize;

/// Ordered collection of a network's parameters.
#[derive(Clone, Default)]
pub struct ParamSet<S: Scalar> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable: true,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id]
    }

    pub fn values_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.params.iter_mut().map(|p| &mut p.value).collect()
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        if self.params[id].value.shape() != value.shape() {
            return Err(Error::shape(
                "param set_value",
                self.params[id].value.shape(),
                value.shape(),
            ));
        }
        self.params[id].value = value;
        Ok(())
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.params.iter().map(|p| p.value.shape().to_vec()).collect()
    }

    /// Total element count over all trainable tensors.
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Little-endian byte image of every parameter, for isolation checks.
    pub fn byte_image(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.params {
            for &v in p.value.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Inserts every parameter into `graph` as a leaf. `trainable` requests
    /// gradients; a parameter's own flag can still veto.
    pub fn bind(&self, graph: &mut Graph<S>, trainable: bool) -> Binding {
        let node_ids = self
            .params
            .iter()
            .map(|p| graph.leaf(p.value.clone(), trainable && p.trainable))
            .collect();
        Binding { node_ids }
    }

    /// Reads back leaf gradients after a backward pass, aligned with params.
    pub fn grads<'g>(&self, graph: &'g Graph<S>, binding: &Binding) -> Vec<Option<&'g [S]>> {
        binding.node_ids.iter().map(|&id| graph.grad(id)).collect()
    }
}

/// Graph leaf ids for one bound `ParamSet`.
#[derive(Clone)]
pub struct Binding {
    node_ids: Vec<NodeId>,
}

impl Binding {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.node_ids[id]
    }
}

/// Truncated normal draw: resamples outside two standard deviations.
pub fn truncated_normal<S: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor<S> {
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        for z in [r * theta.cos(), r * theta.sin()] {
            if z.abs() <= 2.0 && data.len() < numel {
                data.push(S::of_f64(z * std));
            }
        }
    }
    Tensor::new(shape, data).expect("shape/data length agree by construction")
}

/// Default weight-init scale for conv and FC kernels.
pub const INIT_STD: f64 = 0.02;

/// Default Leaky-ReLU slope.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Instance-norm variance guard.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Forward-pass mode: training enables dropout, eval disables it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Convolution layer handle: kernel + bias parameter ids and geometry.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv {
    pub fn build<S: Scalar>(
        params: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Self {
        Self::build_with_std(params, rng, name, out_ch, in_ch, k, stride, padding, INIT_STD)
    }

    /// Conv with an explicit init scale; norm-free stacks use fan-in scaling.
    #[allow(clippy::too_many_arguments)]
    pub fn build_with_std<S: Scalar>(
        params: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: Padding,
        std: f64,
    ) -> Self {
        let w = params.add(
            format!("{name}.w"),
            truncated_normal(rng, vec![out_ch, in_ch, k, k], std),
        );
        let b = params.add(format!("{name}.b"), Tensor::zeros(vec![out_ch]));
        Conv { w, b, stride, padding }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bind: &Binding,
        x: NodeId,
    ) -> Result<NodeId> {
        g.conv2d(x, bind.node(self.w), bind.node(self.b), self.stride, self.padding)
    }
}

/// Transposed-convolution layer handle (kernel 2x2, stride 2).
#[derive(Clone, Copy, Debug)]
pub struct ConvT {
    pub w: ParamId,
    pub b: ParamId,
}

impl ConvT {
    pub fn build<S: Scalar>(
        params: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        out_ch: usize,
        in_ch: usize,
    ) -> Self {
        let w = params.add(
            format!("{name}.w"),
            truncated_normal(rng, vec![out_ch, in_ch, 2, 2], INIT_STD),
        );
        let b = params.add(format!("{name}.b"), Tensor::zeros(vec![out_ch]));
        ConvT { w, b }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bind: &Binding,
        x: NodeId,
    ) -> Result<NodeId> {
        g.conv2d_transpose(x, bind.node(self.w), bind.node(self.b))
    }
}

/// Instance-normalization affine handle.
#[derive(Clone, Copy, Debug)]
pub struct InstNorm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl InstNorm {
    pub fn build<S: Scalar>(params: &mut ParamSet<S>, name: &str, channels: usize) -> Self {
        let scale = params.add(format!("{name}.scale"), Tensor::full(vec![channels], S::one()));
        let shift = params.add(format!("{name}.shift"), Tensor::zeros(vec![channels]));
        InstNorm { scale, shift }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bind: &Binding,
        x: NodeId,
    ) -> Result<NodeId> {
        g.instance_norm(
            x,
            bind.node(self.scale),
            bind.node(self.shift),
            S::of_f64(INSTANCE_NORM_EPS),
        )
    }
}

/// Fully-connected layer handle: y = x W + b over flattened features.
#[derive(Clone, Copy, Debug)]
pub struct Fc {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Fc {
    pub fn build<S: Scalar>(
        params: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        Self::build_with_std(params, rng, name, in_dim, out_dim, INIT_STD)
    }

    pub fn build_with_std<S: Scalar>(
        params: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: f64,
    ) -> Self {
        let w = params.add(
            format!("{name}.w"),
            truncated_normal(rng, vec![in_dim, out_dim], std),
        );
        let b = params.add(format!("{name}.b"), Tensor::zeros(vec![out_dim]));
        Fc { w, b, in_dim, out_dim }
    }

    /// Flattens (batch, ...) to (batch, in_dim) and applies the affine map.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        bind: &Binding,
        x: NodeId,
    ) -> Result<NodeId> {
        let numel = g.value(x).numel();
        let batch = g.value(x).shape()[0];
        if numel % batch != 0 || numel / batch != self.in_dim {
            return Err(Error::invalid(
                "fully_connected",
                format!(
                    "flattened feature length {} does not match weight in-dim {}",
                    numel / batch,
                    self.in_dim
                ),
            ));
        }
        let flat = g.reshape(x, vec![batch, self.in_dim])?;
        let xw = g.matmul(flat, bind.node(self.w))?;
        g.add_bias(xw, bind.node(self.b))
    }
}

/// Inverted dropout: zeroes with probability `rate` and rescales survivors
/// by 1/(1-rate) in training mode; identity in eval mode.
pub fn dropout<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    rate: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = S::of_f64(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(g.value(x).shape().to_vec(), |_| {
        if rng.gen::<f64>() < rate {
            S::zero()
        } else {
            keep
        }
    });
    let m = g.constant(mask);
    g.mul(x, m)
}
