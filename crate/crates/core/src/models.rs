//! Generator and discriminator builders at desk scale.
//!
//! Three generator bodies share one input contract: the channel
//! concatenation of all N domain images in fixed domain order (target and
//! nulled slots zero-filled) followed by the N-channel one-hot target mask.
//! The discriminator is a strided conv trunk with two heads: a patch-level
//! real/fake sigmoid map and an N-way domain softmax, sharing all weights
//! except the last layers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Padding};
use crate::layers::{
    dropout, Binding, Conv, ConvT, Fc, InstNorm, Mode, ParamSet, LEAKY_SLOPE,
};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenArch {
    PlainUnet,
    InceptionUnet,
    MultiBranchUnet,
}

impl GenArch {
    pub fn name(self) -> &'static str {
        match self {
            GenArch::PlainUnet => "plain_unet",
            GenArch::InceptionUnet => "inception_unet",
            GenArch::MultiBranchUnet => "multi_branch_unet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain_unet" => Ok(GenArch::PlainUnet),
            "inception_unet" => Ok(GenArch::InceptionUnet),
            "multi_branch_unet" => Ok(GenArch::MultiBranchUnet),
            other => Err(Error::Config(format!("unknown generator arch '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub arch: GenArch,
    pub n_domains: usize,
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    /// Bottleneck residual blocks; used by the multi-branch decoder only.
    pub residual_blocks: usize,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("generator depth must be >= 1".into()));
        }
        if self.base_width < 2 {
            return Err(Error::Config("generator base_width must be >= 2".into()));
        }
        if self.n_domains < 2 {
            return Err(Error::Config("n_domains must be >= 2".into()));
        }
        if self.in_channels < 1 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Assembled input channels: N images plus the N mask channels.
    pub fn input_channels(&self) -> usize {
        self.n_domains * self.in_channels + self.n_domains
    }

    fn width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

/// Conv unit of the U-net bodies: either conv3-norm-lrelu, or the
/// dual-branch 1x1 + 3x3 inception-style unit (conv pair, concat,
/// instance norm, leaky-ReLU).
#[derive(Clone, Debug)]
enum ConvUnit {
    Cnl { conv: Conv, norm: InstNorm },
    Ccnl { conv1: Conv, conv3: Conv, norm: InstNorm },
}

impl ConvUnit {
    fn build<S: Scalar>(
        params: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        inception: bool,
        in_ch: usize,
        out_ch: usize,
    ) -> Self {
        if inception {
            let half = out_ch / 2;
            ConvUnit::Ccnl {
                conv1: Conv::build(
                    params,
                    rng,
                    &format!("{name}.c1"),
                    half,
                    in_ch,
                    1,
                    1,
                    Padding::Same,
                ),
                conv3: Conv::build(
                    params,
                    rng,
                    &format!("{name}.c3"),
                    out_ch - half,
                    in_ch,
                    3,
                    1,
                    Padding::Same,
                ),
                norm: InstNorm::build(params, &format!("{name}.n"), out_ch),
            }
        } else {
            ConvUnit::Cnl {
                conv: Conv::build(
                    params,
                    rng,
                    &format!("{name}.c"),
                    out_ch,
                    in_ch,
                    3,
                    1,
                    Padding::Same,
                ),
                norm: InstNorm::build(params, &format!("{name}.n"), out_ch),
            }
        }
    }

    fn out_channels<S: Scalar>(&self, params: &ParamSet<S>) -> usize {
        match self {
            ConvUnit::Cnl { conv, .. } => params.get(conv.w).value.shape()[0],
            ConvUnit::Ccnl { conv1, conv3, .. } => {
                params.get(conv1.w).value.shape()[0] + params.get(conv3.w).value.shape()[0]
            }
        }
    }

    fn forward<S: Scalar>(&self, g: &mut Graph<S>, bind: &Binding, x: NodeId) -> Result<NodeId> {
        let alpha = S::of_f64(LEAKY_SLOPE);
        let pre = match self {
            ConvUnit::Cnl { conv, norm } => {
                let y = conv.forward(g, bind, x)?;
                norm.forward(g, bind, y)?
            }
            ConvUnit::Ccnl { conv1, conv3, norm } => {
                let a = conv1.forward(g, bind, x)?;
                let b = conv3.forward(g, bind, x)?;
                let cat = g.concat_channels(&[a, b])?;
                norm.forward(g, bind, cat)?
            }
        };
        Ok(g.leaky_relu(pre, alpha))
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    unit1: ConvUnit,
    unit2: ConvUnit,
}

impl ResBlock {
    fn build<S: Scalar>(
        params: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
    ) -> Self {
        ResBlock {
            unit1: ConvUnit::build(params, rng, &format!("{name}.u1"), false, channels, channels),
            unit2: ConvUnit::build(params, rng, &format!("{name}.u2"), false, channels, channels),
        }
    }

    fn forward<S: Scalar>(&self, g: &mut Graph<S>, bind: &Binding, x: NodeId) -> Result<NodeId> {
        let h = self.unit1.forward(g, bind, x)?;
        let h = self.unit2.forward(g, bind, h)?;
        g.add(x, h)
    }
}

/// One resolution level of the single-encoder U-net bodies.
#[derive(Clone, Debug)]
struct UnetLevel {
    down: Vec<ConvUnit>,
    up: Vec<ConvUnit>,
    /// Halving up-convolution back to the next-shallower width; the top
    /// level feeds the final projection instead.
    upconv: Option<ConvT>,
}

#[derive(Clone, Debug)]
enum GenBody {
    Unet {
        levels: Vec<UnetLevel>,
        bottom: Vec<ConvUnit>,
        bottom_up: ConvT,
        final_proj: Conv,
    },
    MultiBranch {
        /// One encoder per domain; branches[d][level] = the two conv units.
        branches: Vec<Vec<Vec<ConvUnit>>>,
        fuse: Conv,
        res_blocks: Vec<ResBlock>,
        bottom_up: ConvT,
        up_levels: Vec<(Vec<ConvUnit>, Option<ConvT>)>,
        final_proj: Conv,
    },
}

#[derive(Clone)]
pub struct Generator<S: Scalar> {
    pub spec: GeneratorSpec,
    pub params: ParamSet<S>,
    body: GenBody,
}

impl<S: Scalar> Generator<S> {
    pub fn build(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let inception = spec.arch == GenArch::InceptionUnet;
        let body = match spec.arch {
            GenArch::PlainUnet | GenArch::InceptionUnet => {
                let mut levels = Vec::new();
                for level in 0..spec.depth {
                    let w = spec.width(level);
                    let in_ch = if level == 0 {
                        spec.input_channels()
                    } else {
                        spec.width(level - 1)
                    };
                    let down = vec![
                        ConvUnit::build(&mut params, &mut rng, &format!("enc{level}.u0"), inception, in_ch, w),
                        ConvUnit::build(&mut params, &mut rng, &format!("enc{level}.u1"), inception, w, w),
                    ];
                    let up = vec![
                        ConvUnit::build(&mut params, &mut rng, &format!("dec{level}.u0"), inception, 2 * w, w),
                        ConvUnit::build(&mut params, &mut rng, &format!("dec{level}.u1"), inception, w, w),
                    ];
                    let upconv = if level > 0 {
                        Some(ConvT::build(
                            &mut params,
                            &mut rng,
                            &format!("dec{level}.up"),
                            spec.width(level - 1),
                            w,
                        ))
                    } else {
                        None
                    };
                    levels.push(UnetLevel { down, up, upconv });
                }
                let wb = spec.width(spec.depth);
                let bottom = vec![
                    ConvUnit::build(&mut params, &mut rng, "bottom.u0", inception, spec.width(spec.depth - 1), wb),
                    ConvUnit::build(&mut params, &mut rng, "bottom.u1", inception, wb, wb),
                ];
                let bottom_up =
                    ConvT::build(&mut params, &mut rng, "bottom.up", spec.width(spec.depth - 1), wb);
                let final_proj = Conv::build(
                    &mut params,
                    &mut rng,
                    "out",
                    spec.in_channels,
                    spec.base_width,
                    1,
                    1,
                    Padding::Same,
                );
                GenBody::Unet {
                    levels,
                    bottom,
                    bottom_up,
                    final_proj,
                }
            }
            GenArch::MultiBranchUnet => {
                let branch_in = spec.in_channels + spec.n_domains;
                let mut branches = Vec::new();
                for d in 0..spec.n_domains {
                    let mut levels = Vec::new();
                    for level in 0..spec.depth {
                        let w = spec.width(level);
                        let in_ch = if level == 0 { branch_in } else { spec.width(level - 1) };
                        levels.push(vec![
                            ConvUnit::build(&mut params, &mut rng, &format!("br{d}.enc{level}.u0"), false, in_ch, w),
                            ConvUnit::build(&mut params, &mut rng, &format!("br{d}.enc{level}.u1"), false, w, w),
                        ]);
                    }
                    branches.push(levels);
                }
                let wb = spec.width(spec.depth);
                let fuse = Conv::build(
                    &mut params,
                    &mut rng,
                    "fuse",
                    wb,
                    spec.n_domains * spec.width(spec.depth - 1),
                    1,
                    1,
                    Padding::Same,
                );
                let res_blocks = (0..spec.residual_blocks)
                    .map(|i| ResBlock::build(&mut params, &mut rng, &format!("res{i}"), wb))
                    .collect();
                let bottom_up =
                    ConvT::build(&mut params, &mut rng, "bottom.up", spec.width(spec.depth - 1), wb);
                let mut up_levels = Vec::new();
                for level in 0..spec.depth {
                    let w = spec.width(level);
                    // decoder cat: one skip per branch plus the upsampled path
                    let cat_ch = spec.n_domains * w + w;
                    let units = vec![
                        ConvUnit::build(&mut params, &mut rng, &format!("dec{level}.u0"), false, cat_ch, w),
                        ConvUnit::build(&mut params, &mut rng, &format!("dec{level}.u1"), false, w, w),
                    ];
                    let upconv = if level > 0 {
                        Some(ConvT::build(
                            &mut params,
                            &mut rng,
                            &format!("dec{level}.up"),
                            spec.width(level - 1),
                            w,
                        ))
                    } else {
                        None
                    };
                    up_levels.push((units, upconv));
                }
                let final_proj = Conv::build(
                    &mut params,
                    &mut rng,
                    "out",
                    spec.in_channels,
                    spec.base_width,
                    1,
                    1,
                    Padding::Same,
                );
                GenBody::MultiBranch {
                    branches,
                    fuse,
                    res_blocks,
                    bottom_up,
                    up_levels,
                    final_proj,
                }
            }
        };
        Ok(Generator { spec, params, body })
    }

    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Binding {
        self.params.bind(g, trainable)
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    fn check_input(&self, g: &Graph<S>, input: NodeId) -> Result<(usize, usize, usize, usize)> {
        let (b, c, h, w) = g.value(input).dims4()?;
        if c != self.spec.input_channels() {
            return Err(Error::invalid(
                "generator_forward",
                format!(
                    "expected {} input channels (N*in_channels + N), got {c}",
                    self.spec.input_channels()
                ),
            ));
        }
        let div = 1 << self.spec.depth;
        if h % div != 0 || w % div != 0 {
            return Err(Error::invalid(
                "generator_forward",
                format!("spatial size {h}x{w} not divisible by 2^depth = {div}"),
            ));
        }
        Ok((b, c, h, w))
    }

    /// Forward pass over an assembled input; returns the generated image
    /// node of shape (batch, in_channels, h, w). Output range is
    /// unconstrained; callers clamp to [0,1] only at export time.
    pub fn forward(&self, g: &mut Graph<S>, bind: &Binding, input: NodeId) -> Result<NodeId> {
        self.check_input(g, input)?;
        match &self.body {
            GenBody::Unet {
                levels,
                bottom,
                bottom_up,
                final_proj,
            } => {
                let mut skips = Vec::with_capacity(levels.len());
                let mut h = input;
                for (level, l) in levels.iter().enumerate() {
                    if level > 0 {
                        h = g.avg_pool2(h)?;
                    }
                    for unit in &l.down {
                        h = unit.forward(g, bind, h)?;
                    }
                    skips.push(h);
                }
                h = g.avg_pool2(h)?;
                for unit in bottom {
                    h = unit.forward(g, bind, h)?;
                }
                h = bottom_up.forward(g, bind, h)?;
                for (level, l) in levels.iter().enumerate().rev() {
                    h = g.concat_channels(&[skips[level], h])?;
                    for unit in &l.up {
                        h = unit.forward(g, bind, h)?;
                    }
                    if let Some(upconv) = &l.upconv {
                        h = upconv.forward(g, bind, h)?;
                    }
                }
                final_proj.forward(g, bind, h)
            }
            GenBody::MultiBranch {
                branches,
                fuse,
                res_blocks,
                bottom_up,
                up_levels,
                final_proj,
            } => {
                let n = self.spec.n_domains;
                let c = self.spec.in_channels;
                let mask = g.slice_channels(input, n * c, n)?;
                // per-branch encoders over [image_d, mask]
                let mut skips: Vec<Vec<NodeId>> = vec![Vec::new(); self.spec.depth];
                let mut bottoms = Vec::with_capacity(n);
                for (d, branch) in branches.iter().enumerate() {
                    let img = g.slice_channels(input, d * c, c)?;
                    let mut h = g.concat_channels(&[img, mask])?;
                    for (level, units) in branch.iter().enumerate() {
                        if level > 0 {
                            h = g.avg_pool2(h)?;
                        }
                        for unit in units {
                            h = unit.forward(g, bind, h)?;
                        }
                        skips[level].push(h);
                    }
                    bottoms.push(g.avg_pool2(h)?);
                }
                let mut h = g.concat_channels(&bottoms)?;
                h = fuse.forward(g, bind, h)?;
                for block in res_blocks {
                    h = block.forward(g, bind, h)?;
                }
                h = bottom_up.forward(g, bind, h)?;
                for (level, (units, upconv)) in up_levels.iter().enumerate().rev() {
                    let mut cat = skips[level].clone();
                    cat.push(h);
                    h = g.concat_channels(&cat)?;
                    for unit in units {
                        h = unit.forward(g, bind, h)?;
                    }
                    if let Some(upconv) = upconv {
                        h = upconv.forward(g, bind, h)?;
                    }
                }
                final_proj.forward(g, bind, h)
            }
        }
    }

    /// Output channel count of the conv units at `level`; exposes the
    /// width-doubling schedule for structural tests.
    pub fn level_out_channels(&self, level: usize) -> usize {
        match &self.body {
            GenBody::Unet { levels, bottom, .. } => {
                if level < levels.len() {
                    levels[level].down[0].out_channels(&self.params)
                } else {
                    bottom[0].out_channels(&self.params)
                }
            }
            GenBody::MultiBranch { branches, .. } => {
                branches[0][level][0].out_channels(&self.params)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorSpec {
    pub n_domains: usize,
    pub in_channels: usize,
    /// Square input size; fixes the class-head FC dimensionality.
    pub image_size: usize,
    pub base_width: usize,
    pub n_downsamples: usize,
    /// Three parallel multi-resolution branches feeding the shared trunk.
    pub multi_scale: bool,
    pub dropout_rate: f64,
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_downsamples < 1 {
            return Err(Error::Config("n_downsamples must be >= 1".into()));
        }
        if self.multi_scale && self.n_downsamples < 2 {
            return Err(Error::Config(
                "multi_scale trunk already downsamples twice; n_downsamples must be >= 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.n_domains < 2 {
            return Err(Error::Config("n_domains must be >= 2".into()));
        }
        if self.image_size % (1 << self.n_downsamples) != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by 2^{}",
                self.image_size, self.n_downsamples
            )));
        }
        Ok(())
    }

}

/// One conv stage of the discriminator: conv, leaky-ReLU, dropout. The
/// trunk carries no normalization so per-image intensity statistics reach
/// both heads; fan-in-scaled init keeps activations O(1) through the stack.
#[derive(Clone, Debug)]
struct DscStage {
    conv: Conv,
}

impl DscStage {
    fn build<S: Scalar>(
        params: &mut ParamSet<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let std = (2.0 / (in_ch * k * k) as f64).sqrt();
        let conv =
            Conv::build_with_std(params, rng, name, out_ch, in_ch, k, stride, Padding::Same, std);
        DscStage { conv }
    }
}

#[derive(Clone)]
pub struct Discriminator<S: Scalar> {
    pub spec: DiscriminatorSpec,
    pub params: ParamSet<S>,
    branches: Option<[Vec<DscStage>; 3]>,
    trunk: Vec<DscStage>,
    patch_head: Conv,
    class_head: Fc,
    /// Param ids of the patch head, for isolation checks.
    patch_head_params: Vec<usize>,
}

impl<S: Scalar> Discriminator<S> {
    pub fn build(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let w0 = spec.base_width;

        let (branches, trunk_in, trunk_start) = if spec.multi_scale {
            // 1a: full-resolution stack, then /4; 1b: two stride-2 stages;
            // 1c: /4 first, then full-field convs. All end at base width, /4.
            let a = vec![
                DscStage::build(&mut params, &mut rng, "br_a.c0", w0, spec.in_channels, 3, 1),
                DscStage::build(&mut params, &mut rng, "br_a.c1", w0, w0, 3, 1),
                DscStage::build(&mut params, &mut rng, "br_a.c2", w0, w0, 4, 4),
            ];
            let b = vec![
                DscStage::build(&mut params, &mut rng, "br_b.c0", w0, spec.in_channels, 4, 2),
                DscStage::build(&mut params, &mut rng, "br_b.c1", w0, w0, 4, 2),
            ];
            let c = vec![
                DscStage::build(&mut params, &mut rng, "br_c.c0", w0, spec.in_channels, 4, 4),
                DscStage::build(&mut params, &mut rng, "br_c.c1", w0, w0, 3, 1),
                DscStage::build(&mut params, &mut rng, "br_c.c2", w0, w0, 3, 1),
            ];
            (Some([a, b, c]), 3 * w0, 2)
        } else {
            (None, spec.in_channels, 0)
        };

        let mut trunk = Vec::new();
        let mut in_ch = trunk_in;
        for stage in trunk_start..spec.n_downsamples {
            let out_ch = spec.base_width << stage;
            trunk.push(DscStage::build(
                &mut params,
                &mut rng,
                &format!("trunk{stage}"),
                out_ch,
                in_ch,
                4,
                2,
            ));
            in_ch = out_ch;
        }

        let patch_head = Conv::build(&mut params, &mut rng, "patch", 1, in_ch, 3, 1, Padding::Same);
        let patch_head_params = vec![patch_head.w, patch_head.b];
        // class head: global average pool over the trunk map, then FC
        let fc_std = (2.0 / in_ch as f64).sqrt();
        let class_head = Fc::build_with_std(&mut params, &mut rng, "class", in_ch, spec.n_domains, fc_std);

        Ok(Discriminator {
            spec,
            params,
            branches,
            trunk,
            patch_head,
            class_head,
            patch_head_params,
        })
    }

    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Binding {
        self.params.bind(g, trainable)
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Byte image of the real/fake head only, for pretraining isolation checks.
    pub fn patch_head_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for &id in &self.patch_head_params {
            for &v in self.params.get(id).value.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    /// Two-head forward pass: (patch real/fake map in (0,1), class probs over N).
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        bind: &Binding,
        image: NodeId,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(NodeId, NodeId)> {
        let (_, c, h, w) = g.value(image).dims4()?;
        if c != self.spec.in_channels || h != self.spec.image_size || w != self.spec.image_size {
            return Err(Error::invalid(
                "discriminator_forward",
                format!(
                    "expected (_, {}, {s}, {s}) input, got (_, {c}, {h}, {w})",
                    self.spec.in_channels,
                    s = self.spec.image_size
                ),
            ));
        }
        let alpha = S::of_f64(LEAKY_SLOPE);
        let mut h = image;
        if let Some(branches) = &self.branches {
            let mut outs = Vec::with_capacity(3);
            for branch in branches {
                let mut bh = image;
                for stage in branch {
                    bh = stage.conv.forward(g, bind, bh)?;
                    bh = g.leaky_relu(bh, alpha);
                    bh = dropout(g, bh, self.spec.dropout_rate, mode, rng)?;
                }
                outs.push(bh);
            }
            h = g.concat_channels(&outs)?;
        }
        for stage in &self.trunk {
            h = stage.conv.forward(g, bind, h)?;
            h = g.leaky_relu(h, alpha);
            h = dropout(g, h, self.spec.dropout_rate, mode, rng)?;
        }
        let patch_logits = self.patch_head.forward(g, bind, h)?;
        let patch = g.sigmoid(patch_logits);
        let pooled = g.mean_spatial(h)?;
        let class_logits = self.class_head.forward(g, bind, pooled)?;
        let probs = g.softmax_rows(class_logits)?;
        Ok((patch, probs))
    }
}
