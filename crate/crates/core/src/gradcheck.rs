//! Central finite-difference verification of every differentiable
//! operation and loss term.
//!
//! Each check rebuilds its forward function from plain input tensors, so the
//! numerical side never touches the backward implementation it validates.
//! The suite runs in either precision: tolerances are 1e-5 in f64 and 1e-3
//! in f32, with step sizes 1e-3 and 1e-2 respectively.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId, Padding};
use crate::losses::{self, SsimConfig, Window};
use crate::models::{GenArch, Generator, GeneratorSpec};
use crate::tensor::{DType, Scalar, Tensor};

/// Outcome of one finite-difference check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_err: f64,
}

/// Default pass tolerance for the given precision.
pub fn default_tolerance<S: Scalar>() -> f64 {
    match S::DTYPE {
        DType::F64 => 1e-5,
        DType::F32 => 1e-3,
    }
}

fn fd_step<S: Scalar>() -> f64 {
    match S::DTYPE {
        DType::F64 => 1e-3,
        DType::F32 => 1e-2,
    }
}

/// Builds a loss from owned input tensors. Must be a pure function of them.
/// Returned leaf ids align with the leading differentiable inputs; trailing
/// inputs without a leaf id are treated as constants.
type LossFn<S> = dyn Fn(&mut Graph<S>, &[Tensor<S>]) -> Result<(NodeId, Vec<NodeId>)>;

/// Compares backward gradients against central finite differences for every
/// element of every differentiable input; returns the worst floored
/// relative error.
pub fn check_op<S: Scalar>(name: &str, inputs: &[Tensor<S>], f: &LossFn<S>) -> Result<GradCheckReport> {
    check_op_with_step(name, inputs, fd_step::<S>(), f)
}

/// As [`check_op`] with an explicit central-difference step.
pub fn check_op_with_step<S: Scalar>(
    name: &str,
    inputs: &[Tensor<S>],
    h: f64,
    f: &LossFn<S>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let (loss, leaf_ids) = f(&mut g, inputs)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<S>> = leaf_ids
        .iter()
        .map(|&id| g.grad(id).map(|v| v.to_vec()).unwrap_or_default())
        .collect();
    let mut max_rel = 0.0f64;
    for (pi, input) in inputs.iter().take(analytic.len()).enumerate() {
        if analytic[pi].is_empty() {
            continue;
        }
        for ei in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut shifted = inputs.to_vec();
                let d = shifted[pi].data_mut();
                d[ei] = d[ei] + S::of_f64(delta);
                let mut g = Graph::new();
                let (loss, _) = f(&mut g, &shifted)?;
                Ok(g.value(loss).scalar()?.as_f64())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let a = analytic[pi][ei].as_f64();
            let scale = a.abs().max(numeric.abs()).max(1.0);
            max_rel = max_rel.max((a - numeric).abs() / scale);
        }
    }
    Ok(GradCheckReport {
        op: name.to_string(),
        max_rel_err: max_rel,
    })
}

fn rng_tensor<S: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<S> {
    Tensor::from_fn(shape, |_| S::of_f64(rng.gen_range(lo..hi)))
}

/// Random-projection scalarizer: loss = sum(x * fixed_random_weights),
/// giving every output element a distinct cotangent.
fn project<S: Scalar>(g: &mut Graph<S>, x: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(g.value(x).shape().to_vec(), |_| {
        S::of_f64(rng.gen_range(-1.0..1.0))
    });
    let wn = g.constant(w);
    let prod = g.mul(x, wn)?;
    Ok(g.sum_all(prod))
}

/// Runs the full finite-difference suite over every layer and loss term.
pub fn run_suite<S: Scalar>(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    // elementwise and scalar ops
    let a: Tensor<S> = rng_tensor(&mut rng, vec![2, 3], -2.0, 2.0);
    let b: Tensor<S> = rng_tensor(&mut rng, vec![2, 3], 0.5, 2.5);
    reports.push(check_op("add", &[a.clone(), b.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let y = g.leaf(t[1].clone(), true);
        let s = g.add(x, y)?;
        Ok((project(g, s, 100)?, vec![x, y]))
    })?);
    reports.push(check_op("mul", &[a.clone(), b.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let y = g.leaf(t[1].clone(), true);
        let s = g.mul(x, y)?;
        Ok((project(g, s, 101)?, vec![x, y]))
    })?);
    reports.push(check_op("div", &[a.clone(), b.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let y = g.leaf(t[1].clone(), true);
        let s = g.div(x, y)?;
        Ok((project(g, s, 102)?, vec![x, y]))
    })?);
    reports.push(check_op("affine", &[a.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.affine(x, S::of_f64(-1.7), S::of_f64(0.3));
        Ok((project(g, s, 103)?, vec![x]))
    })?);
    // keep inputs away from the |.| kink
    let away: Tensor<S> = Tensor::from_fn(vec![2, 3], |i| {
        let v = 0.5 + 0.31 * i as f64;
        S::of_f64(if i % 2 == 0 { v } else { -v })
    });
    reports.push(check_op("abs", &[away.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.abs(x);
        Ok((project(g, s, 104)?, vec![x]))
    })?);
    reports.push(check_op("log", &[b.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.log(x);
        Ok((project(g, s, 105)?, vec![x]))
    })?);
    reports.push(check_op("clamp_min", &[away.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.clamp_min(x, S::of_f64(0.1));
        Ok((project(g, s, 106)?, vec![x]))
    })?);
    reports.push(check_op("leaky_relu", &[away.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.leaky_relu(x, S::of_f64(0.2));
        Ok((project(g, s, 107)?, vec![x]))
    })?);
    reports.push(check_op("sigmoid", &[a.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.sigmoid(x);
        Ok((project(g, s, 108)?, vec![x]))
    })?);
    reports.push(check_op("softmax", &[a.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.softmax_rows(x)?;
        Ok((project(g, s, 109)?, vec![x]))
    })?);
    let logits8: Tensor<S> = rng_tensor(&mut rng, vec![1, 8], -2.0, 2.0);
    reports.push(check_op("log_softmax", &[logits8], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.softmax_rows(x)?;
        let l = g.log(s);
        Ok((project(g, l, 124)?, vec![x]))
    })?);

    // linear algebra and reductions
    let ma: Tensor<S> = rng_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
    let mb: Tensor<S> = rng_tensor(&mut rng, vec![4, 2], -1.0, 1.0);
    reports.push(check_op("matmul", &[ma, mb], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let y = g.leaf(t[1].clone(), true);
        let s = g.matmul(x, y)?;
        Ok((project(g, s, 110)?, vec![x, y]))
    })?);
    let bias: Tensor<S> = rng_tensor(&mut rng, vec![3], -1.0, 1.0);
    reports.push(check_op("add_bias", &[a.clone(), bias], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let y = g.leaf(t[1].clone(), true);
        let s = g.add_bias(x, y)?;
        Ok((project(g, s, 111)?, vec![x, y]))
    })?);
    reports.push(check_op("sum", &[a.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.sum_all(x);
        Ok((s, vec![x]))
    })?);
    reports.push(check_op("mean", &[a.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.mean_all(x);
        Ok((s, vec![x]))
    })?);
    reports.push(check_op("sum_rows", &[a.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.sum_rows(x)?;
        Ok((project(g, s, 112)?, vec![x]))
    })?);

    // structural ops
    let im1: Tensor<S> = rng_tensor(&mut rng, vec![2, 2, 4, 4], -1.0, 1.0);
    let im2: Tensor<S> = rng_tensor(&mut rng, vec![2, 3, 4, 4], -1.0, 1.0);
    reports.push(check_op("concat_channels", &[im1.clone(), im2.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let y = g.leaf(t[1].clone(), true);
        let s = g.concat_channels(&[x, y])?;
        Ok((project(g, s, 113)?, vec![x, y]))
    })?);
    reports.push(check_op("slice_channels", &[im2.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.slice_channels(x, 1, 2)?;
        Ok((project(g, s, 114)?, vec![x]))
    })?);
    reports.push(check_op("reshape", &[im1.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.reshape(x, vec![2, 32])?;
        Ok((project(g, s, 115)?, vec![x]))
    })?);
    reports.push(check_op("pad_reflect", &[im1.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.pad_reflect(x, 2)?;
        Ok((project(g, s, 116)?, vec![x]))
    })?);

    // spatial layers: inputs AND parameters
    let cx: Tensor<S> = rng_tensor(&mut rng, vec![1, 3, 8, 8], -1.0, 1.0);
    let cw: Tensor<S> = rng_tensor(&mut rng, vec![4, 3, 3, 3], -0.6, 0.6);
    let cb: Tensor<S> = rng_tensor(&mut rng, vec![4], -0.2, 0.2);
    for (name, stride, padding) in [
        ("conv2d_s1_same", 1, Padding::Same),
        ("conv2d_s1_valid", 1, Padding::Valid),
    ] {
        reports.push(check_op(name, &[cx.clone(), cw.clone(), cb.clone()], &move |g, t| {
            let x = g.leaf(t[0].clone(), true);
            let w = g.leaf(t[1].clone(), true);
            let b = g.leaf(t[2].clone(), true);
            let s = g.conv2d(x, w, b, stride, padding)?;
            Ok((project(g, s, 117)?, vec![x, w, b]))
        })?);
    }
    let cw2: Tensor<S> = rng_tensor(&mut rng, vec![4, 3, 4, 4], -0.6, 0.6);
    reports.push(check_op("conv2d_s2_same", &[cx.clone(), cw2, cb.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let w = g.leaf(t[1].clone(), true);
        let b = g.leaf(t[2].clone(), true);
        let s = g.conv2d(x, w, b, 2, Padding::Same)?;
        Ok((project(g, s, 118)?, vec![x, w, b]))
    })?);
    let tw: Tensor<S> = rng_tensor(&mut rng, vec![2, 3, 2, 2], -0.6, 0.6);
    let tb: Tensor<S> = rng_tensor(&mut rng, vec![2], -0.2, 0.2);
    reports.push(check_op("conv2d_transpose", &[cx.clone(), tw, tb], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let w = g.leaf(t[1].clone(), true);
        let b = g.leaf(t[2].clone(), true);
        let s = g.conv2d_transpose(x, w, b)?;
        Ok((project(g, s, 119)?, vec![x, w, b]))
    })?);
    reports.push(check_op("avg_pool2", &[cx.clone()], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let s = g.avg_pool2(x)?;
        Ok((project(g, s, 120)?, vec![x]))
    })?);
    let inx: Tensor<S> = rng_tensor(&mut rng, vec![2, 3, 4, 4], -1.0, 1.0);
    let insc: Tensor<S> = rng_tensor(&mut rng, vec![3], 0.5, 1.5);
    let insh: Tensor<S> = rng_tensor(&mut rng, vec![3], -0.3, 0.3);
    reports.push(check_op("instance_norm", &[inx, insc, insh], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let sc = g.leaf(t[1].clone(), true);
        let sh = g.leaf(t[2].clone(), true);
        let s = g.instance_norm(x, sc, sh, S::of_f64(1e-5))?;
        Ok((project(g, s, 121)?, vec![x, sc, sh]))
    })?);
    let fx: Tensor<S> = rng_tensor(&mut rng, vec![2, 6], -1.0, 1.0);
    let fw: Tensor<S> = rng_tensor(&mut rng, vec![6, 3], -0.6, 0.6);
    let fb: Tensor<S> = rng_tensor(&mut rng, vec![3], -0.2, 0.2);
    reports.push(check_op("fully_connected", &[fx, fw, fb], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let w = g.leaf(t[1].clone(), true);
        let b = g.leaf(t[2].clone(), true);
        let xw = g.matmul(x, w)?;
        let s = g.add_bias(xw, b)?;
        Ok((project(g, s, 122)?, vec![x, w, b]))
    })?);
    // dropout with a frozen mask: the surviving-scale multiply path
    let dmask: Tensor<S> = Tensor::from_fn(vec![2, 2, 4, 4], |i| {
        if i % 3 == 0 {
            S::zero()
        } else {
            S::of_f64(2.0)
        }
    });
    reports.push(check_op("dropout_masked", &[im1.clone(), dmask], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let m = g.constant(t[1].clone());
        let s = g.mul(x, m)?;
        Ok((project(g, s, 123)?, vec![x]))
    })?);

    // loss terms (Eqs. of the training objective, both LSGAN losses)
    let ssim_cfg = SsimConfig {
        window: Window::Gaussian { size: 5, sigma: 1.5 },
        ..Default::default()
    };
    let sx: Tensor<S> = rng_tensor(&mut rng, vec![1, 1, 8, 8], 0.1, 0.9);
    let sy: Tensor<S> = rng_tensor(&mut rng, vec![1, 1, 8, 8], 0.1, 0.9);
    reports.push(check_op("ssim_loss", &[sx.clone(), sy.clone()], &move |g, t| {
        let x = g.leaf(t[0].clone(), true);
        let y = g.leaf(t[1].clone(), true);
        let s = losses::ssim_loss(g, x, y, &ssim_cfg)?;
        Ok((s, vec![x, y]))
    })?);
    // reconstructions offset from the originals by at least 0.05 so the
    // finite-difference step cannot cross the |.| kink
    let kink_safe = |src: &Tensor<S>, rng: &mut ChaCha8Rng| -> Tensor<S> {
        let offsets: Vec<S> = (0..src.numel())
            .map(|_| {
                let mag = rng.gen_range(0.05..0.3);
                S::of_f64(if rng.gen::<bool>() { mag } else { -mag })
            })
            .collect();
        Tensor::from_fn(src.shape().to_vec(), |i| src.data()[i] + offsets[i])
    };
    let sz: Tensor<S> = kink_safe(&sx, &mut rng);
    let sw: Tensor<S> = kink_safe(&sy, &mut rng);
    reports.push(check_op(
        "mcc_loss",
        &[sx.clone(), sy.clone(), sz.clone(), sw.clone()],
        &|g, t| {
            let o1 = g.leaf(t[0].clone(), true);
            let o2 = g.leaf(t[1].clone(), true);
            let r1 = g.leaf(t[2].clone(), true);
            let r2 = g.leaf(t[3].clone(), true);
            let s = losses::mcc_loss(g, &[o1, o2], &[r1, r2])?;
            Ok((s, vec![o1, o2, r1, r2]))
        },
    )?);
    reports.push(check_op(
        "mcc_ssim_loss",
        &[sx.clone(), sy.clone(), sz, sw],
        &move |g, t| {
            let o1 = g.leaf(t[0].clone(), true);
            let o2 = g.leaf(t[1].clone(), true);
            let r1 = g.leaf(t[2].clone(), true);
            let r2 = g.leaf(t[3].clone(), true);
            let s = losses::mcc_ssim_loss(g, &[o1, o2], &[r1, r2], &ssim_cfg)?;
            Ok((s, vec![o1, o2, r1, r2]))
        },
    )?);
    let dreal: Tensor<S> = rng_tensor(&mut rng, vec![2, 1, 3, 3], 0.1, 0.9);
    let dfake: Tensor<S> = rng_tensor(&mut rng, vec![2, 1, 3, 3], 0.1, 0.9);
    reports.push(check_op("lsgan_dsc_loss", &[dreal, dfake.clone()], &|g, t| {
        let r = g.leaf(t[0].clone(), true);
        let f = g.leaf(t[1].clone(), true);
        let s = losses::lsgan_dsc_loss(g, r, f)?;
        Ok((s, vec![r, f]))
    })?);
    reports.push(check_op("lsgan_gen_loss", &[dfake], &|g, t| {
        let f = g.leaf(t[0].clone(), true);
        let s = losses::lsgan_gen_loss(g, f)?;
        Ok((s, vec![f]))
    })?);
    let logits: Tensor<S> = rng_tensor(&mut rng, vec![3, 4], -2.0, 2.0);
    reports.push(check_op("clsf_loss", &[logits], &|g, t| {
        let x = g.leaf(t[0].clone(), true);
        let p = g.softmax_rows(x)?;
        let s = losses::clsf_loss(g, p, &[2, 0, 3])?;
        Ok((s, vec![x]))
    })?);

    // composite: conv -> norm -> leaky-relu -> sum network. The norm affine
    // uses a small scale and a unit-magnitude shift, so every pre-activation
    // clears the leaky-ReLU kink by more than the finite-difference step can
    // bridge: |scale * xhat| <= 0.2 * sqrt(15) < 0.8 < |shift|.
    let nx: Tensor<S> = rng_tensor(&mut rng, vec![1, 1, 4, 4], -1.0, 1.0);
    let nw: Tensor<S> = rng_tensor(&mut rng, vec![2, 1, 3, 3], -0.5, 0.5);
    let nb: Tensor<S> = rng_tensor(&mut rng, vec![2], -0.2, 0.2);
    let nsc: Tensor<S> = rng_tensor(&mut rng, vec![2], 0.1, 0.2);
    let nsh: Tensor<S> = Tensor::from_fn(vec![2], |i| {
        let mag = 1.0 + 0.4 * i as f64;
        S::of_f64(if i % 2 == 0 { mag } else { -mag })
    });
    reports.push(check_op(
        "conv_norm_relu_sum",
        &[nx, nw, nb, nsc, nsh],
        &|g, t| {
            let x = g.leaf(t[0].clone(), true);
            let w = g.leaf(t[1].clone(), true);
            let b = g.leaf(t[2].clone(), true);
            let sc = g.leaf(t[3].clone(), true);
            let sh = g.leaf(t[4].clone(), true);
            let c = g.conv2d(x, w, b, 1, Padding::Same)?;
            let n = g.instance_norm(c, sc, sh, S::of_f64(1e-5))?;
            let r = g.leaky_relu(n, S::of_f64(0.2));
            Ok((g.sum_all(r), vec![x, w, b, sc, sh]))
        },
    )?);

    Ok(reports)
}

/// Full gradient check of the weighted generator objective through a tiny
/// generator: perturbs every generator parameter.
pub fn check_total_gen_through_tiny_generator<S: Scalar>(seed: u64) -> Result<GradCheckReport> {
    let spec = GeneratorSpec {
        arch: GenArch::PlainUnet,
        n_domains: 3,
        in_channels: 1,
        base_width: 2,
        depth: 1,
        residual_blocks: 0,
    };
    let gen = Generator::<S>::build(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let input: Tensor<S> = rng_tensor(&mut rng, vec![1, spec.input_channels(), 8, 8], 0.1, 0.9);
    // originals sit well above the random-init generator's output range so
    // the cycle L1 term stays away from its kink under FD perturbation
    let originals: Vec<Tensor<S>> = (0..2)
        .map(|_| rng_tensor(&mut rng, vec![1, 1, 8, 8], 0.5, 0.9))
        .collect();
    let dsc_patch: Tensor<S> = rng_tensor(&mut rng, vec![1, 1, 8, 8], -0.5, 0.5);
    let ssim_cfg = SsimConfig {
        window: Window::Gaussian { size: 5, sigma: 1.5 },
        ..Default::default()
    };
    let weights = crate::losses::LossWeights::default();

    let param_tensors: Vec<Tensor<S>> = gen.params.iter().map(|p| p.value.clone()).collect();
    let mut all_inputs = param_tensors;
    all_inputs.push(input);
    all_inputs.push(originals[0].clone());
    all_inputs.push(originals[1].clone());
    all_inputs.push(dsc_patch);
    let n_params = gen.params.len();

    check_op_with_step("total_gen_tiny_generator", &all_inputs, 1e-6, &move |g, t| {
        // rebuild the generator with the perturbed parameter tensors
        let mut gen = Generator::<S>::build(spec, seed)?;
        for (i, tensor) in t[..n_params].iter().enumerate() {
            gen.params.set_value(i, tensor.clone())?;
        }
        let bind = gen.bind(g, true);
        let input = g.constant(t[n_params].clone());
        let o1 = g.constant(t[n_params + 1].clone());
        let o2 = g.constant(t[n_params + 2].clone());
        let fake = gen.forward(g, &bind, input)?;
        // treat the single forward output as both "reconstructions" against
        // two originals; adversarial patch response approximated by a fixed
        // random projection of the fake image
        let mcc = losses::mcc_loss(g, &[o1, o2], &[fake, fake])?;
        let mcc_ssim = losses::mcc_ssim_loss(g, &[o1, o2], &[fake, fake], &ssim_cfg)?;
        let proj = g.constant(t[n_params + 3].clone());
        let response = g.mul(fake, proj)?;
        let gan_gen = losses::lsgan_gen_loss(g, response)?;
        let wm = g.affine(mcc, S::of_f64(weights.mcc), S::zero());
        let ws = g.affine(mcc_ssim, S::of_f64(weights.mcc_ssim), S::zero());
        let wg = g.affine(gan_gen, S::of_f64(weights.gan), S::zero());
        let t1 = g.add(wm, ws)?;
        let total = g.add(t1, wg)?;
        let leaf_ids: Vec<NodeId> = (0..n_params).map(|i| bind.node(i)).collect();
        Ok((total, leaf_ids))
    })
}

/// Convenience: run the suite and the tiny-generator composite, returning
/// all reports. Used by the CLI `gradcheck` command and the acceptance test.
pub fn run_full<S: Scalar>(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = run_suite::<S>(seed)?;
    if S::DTYPE == DType::F64 {
        // the through-generator composite needs a step below f32 resolution
        reports.push(check_total_gen_through_tiny_generator::<S>(seed)?);
    }
    Ok(reports)
}
