//! Loss terms for collaborative multi-domain training.
//!
//! All losses here build differentiable graph nodes; evaluation-only
//! metric variants live in `metrics`. Every log is guarded by a clamp at
//! `LOG_FLOOR` so losses stay bounded under adversarial collapse.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Padding};
use crate::tensor::{Scalar, Tensor};

/// Floor applied before every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Local-statistics window for SSIM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    Gaussian { size: usize, sigma: f64 },
    Uniform { size: usize },
}

impl Window {
    pub fn size(&self) -> usize {
        match *self {
            Window::Gaussian { size, .. } => size,
            Window::Uniform { size } => size,
        }
    }

    /// Normalized window weights as a (1, 1, size, size) conv kernel.
    pub fn kernel<S: Scalar>(&self) -> Tensor<S> {
        let size = self.size();
        let mut w = vec![0.0f64; size * size];
        match *self {
            Window::Uniform { .. } => {
                w.fill(1.0);
            }
            Window::Gaussian { sigma, .. } => {
                let c = (size as f64 - 1.0) / 2.0;
                for y in 0..size {
                    for x in 0..size {
                        let dy = y as f64 - c;
                        let dx = x as f64 - c;
                        w[y * size + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
        let total: f64 = w.iter().sum();
        Tensor::new(
            vec![1, 1, size, size],
            w.into_iter().map(|v| S::of_f64(v / total)).collect(),
        )
        .expect("window buffer sized to shape")
    }
}

/// SSIM stabilizers and window configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of pixel intensities.
    pub l: f64,
    pub window: Window,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            k1: 0.01,
            k2: 0.03,
            l: 1.0,
            window: Window::Gaussian { size: 11, sigma: 1.5 },
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 <= 0.0 || self.k2 <= 0.0 {
            return Err(Error::invalid("ssim", "k1 and k2 must be positive"));
        }
        if self.l <= 0.0 {
            return Err(Error::invalid("ssim", "dynamic range L must be positive"));
        }
        if self.window.size() % 2 == 0 {
            return Err(Error::invalid("ssim", "window size must be odd"));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.l) * (self.k1 * self.l)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.l) * (self.k2 * self.l)
    }
}

/// Weights combining the generator-side loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub mcc: f64,
    pub mcc_ssim: f64,
    pub gan: f64,
    pub clsf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mcc: 10.0,
            mcc_ssim: 1.0,
            gan: 1.0,
            clsf: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mcc", self.mcc),
            ("mcc_ssim", self.mcc_ssim),
            ("gan", self.gan),
            ("clsf", self.clsf),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(
                    "loss_weights",
                    format!("weight {name} must be nonnegative, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Per-term loss values for one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub mcc: f64,
    pub mcc_ssim: f64,
    pub gan_gen: f64,
    pub gan_dsc: f64,
    pub clsf_real: f64,
    pub clsf_fake: f64,
    pub total_gen: f64,
    pub total_dsc: f64,
}

/// Unweighted loss parts, combined into a report by [`aggregate`].
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub mcc: f64,
    pub mcc_ssim: f64,
    pub gan_gen: f64,
    pub gan_dsc: f64,
    pub clsf_real: f64,
    pub clsf_fake: f64,
}

/// Combines raw parts into totals:
/// total_gen = w.mcc*mcc + w.mcc_ssim*mcc_ssim + w.gan*gan_gen + w.clsf*clsf_fake,
/// total_dsc = gan_dsc + clsf_real.
pub fn aggregate(parts: LossParts, weights: LossWeights) -> Result<LossReport> {
    for (name, v) in [
        ("mcc", parts.mcc),
        ("mcc_ssim", parts.mcc_ssim),
        ("gan_gen", parts.gan_gen),
        ("gan_dsc", parts.gan_dsc),
        ("clsf_real", parts.clsf_real),
        ("clsf_fake", parts.clsf_fake),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: format!("loss term {name}"),
            });
        }
    }
    Ok(LossReport {
        mcc: parts.mcc,
        mcc_ssim: parts.mcc_ssim,
        gan_gen: parts.gan_gen,
        gan_dsc: parts.gan_dsc,
        clsf_real: parts.clsf_real,
        clsf_fake: parts.clsf_fake,
        total_gen: weights.mcc * parts.mcc
            + weights.mcc_ssim * parts.mcc_ssim
            + weights.gan * parts.gan_gen
            + weights.clsf * parts.clsf_fake,
        total_dsc: parts.gan_dsc + parts.clsf_real,
    })
}

fn window_mean<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    kernel: NodeId,
    zero_bias: NodeId,
    pad: usize,
) -> Result<NodeId> {
    let padded = g.pad_reflect(x, pad)?;
    g.conv2d(padded, kernel, zero_bias, 1, Padding::Valid)
}

/// Per-pixel SSIM map between same-shaped image tensors (batch, c, h, w).
/// Local statistics use the configured window with reflective boundaries;
/// multi-channel inputs yield the per-channel mean map.
pub fn ssim_map<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    y: NodeId,
    cfg: &SsimConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let sx = g.value(x).shape().to_vec();
    let sy = g.value(y).shape().to_vec();
    if sx != sy {
        return Err(Error::shape("ssim_map", &sx, &sy));
    }
    let (_, channels, _, _) = g.value(x).dims4()?;
    let kernel = g.constant(cfg.window.kernel::<S>());
    let zero_bias = g.constant(Tensor::zeros(vec![1]));
    let pad = cfg.window.size() / 2;
    let c1 = S::of_f64(cfg.c1());
    let c2 = S::of_f64(cfg.c2());
    let two = S::of_f64(2.0);

    let mut acc: Option<NodeId> = None;
    for ch in 0..channels {
        let xc = g.slice_channels(x, ch, 1)?;
        let yc = g.slice_channels(y, ch, 1)?;

        let mu_x = window_mean(g, xc, kernel, zero_bias, pad)?;
        let mu_y = window_mean(g, yc, kernel, zero_bias, pad)?;
        let xx = g.mul(xc, xc)?;
        let yy = g.mul(yc, yc)?;
        let xy = g.mul(xc, yc)?;
        let e_xx = window_mean(g, xx, kernel, zero_bias, pad)?;
        let e_yy = window_mean(g, yy, kernel, zero_bias, pad)?;
        let e_xy = window_mean(g, xy, kernel, zero_bias, pad)?;

        let mu_xx = g.mul(mu_x, mu_x)?;
        let mu_yy = g.mul(mu_y, mu_y)?;
        let mu_xy = g.mul(mu_x, mu_y)?;
        let var_x = g.sub(e_xx, mu_xx)?;
        let var_y = g.sub(e_yy, mu_yy)?;
        let cov = g.sub(e_xy, mu_xy)?;

        // (2 mu_x mu_y + C1)(2 cov + C2) / ((mu_x^2 + mu_y^2 + C1)(var_x + var_y + C2))
        let n1 = g.affine(mu_xy, two, c1);
        let n2 = g.affine(cov, two, c2);
        let num = g.mul(n1, n2)?;
        let d1s = g.add(mu_xx, mu_yy)?;
        let d1 = g.affine(d1s, S::one(), c1);
        let d2s = g.add(var_x, var_y)?;
        let d2 = g.affine(d2s, S::one(), c2);
        let den = g.mul(d1, d2)?;
        let map = g.div(num, den)?;

        acc = Some(match acc {
            None => map,
            Some(prev) => g.add(prev, map)?,
        });
    }
    let total = acc.ok_or_else(|| Error::invalid("ssim_map", "zero-channel input"))?;
    Ok(g.affine(total, S::of_f64(1.0 / channels as f64), S::zero()))
}

/// SSIM loss: -log( mean(1 + SSIM) / 2 ), clamped below at `LOG_FLOOR`.
pub fn ssim_loss<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    y: NodeId,
    cfg: &SsimConfig,
) -> Result<NodeId> {
    let map = ssim_map(g, x, y, cfg)?;
    let shifted = g.affine(map, S::one(), S::one());
    let mean = g.mean_all(shifted);
    let half = g.affine(mean, S::of_f64(0.5), S::zero());
    let clamped = g.clamp_min(half, S::of_f64(LOG_FLOOR));
    let log = g.log(clamped);
    Ok(g.neg(log))
}

/// Multiple cycle-consistency loss: the sum over non-target domains of the
/// per-image mean absolute reconstruction error.
pub fn mcc_loss<S: Scalar>(
    g: &mut Graph<S>,
    originals: &[NodeId],
    reconstructions: &[NodeId],
) -> Result<NodeId> {
    if originals.len() != reconstructions.len() || originals.is_empty() {
        return Err(Error::invalid(
            "mcc_loss",
            format!(
                "got {} originals and {} reconstructions",
                originals.len(),
                reconstructions.len()
            ),
        ));
    }
    let mut acc: Option<NodeId> = None;
    for (&o, &r) in originals.iter().zip(reconstructions) {
        let diff = g.sub(o, r)?;
        let mag = g.abs(diff);
        let term = g.mean_all(mag);
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term)?,
        });
    }
    Ok(acc.expect("non-empty list checked above"))
}

/// SSIM cycle-consistency companion: sum of per-domain SSIM losses.
pub fn mcc_ssim_loss<S: Scalar>(
    g: &mut Graph<S>,
    originals: &[NodeId],
    reconstructions: &[NodeId],
    cfg: &SsimConfig,
) -> Result<NodeId> {
    if originals.len() != reconstructions.len() || originals.is_empty() {
        return Err(Error::invalid(
            "mcc_ssim_loss",
            format!(
                "got {} originals and {} reconstructions",
                originals.len(),
                reconstructions.len()
            ),
        ));
    }
    let mut acc: Option<NodeId> = None;
    for (&o, &r) in originals.iter().zip(reconstructions) {
        let term = ssim_loss(g, o, r, cfg)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term)?,
        });
    }
    Ok(acc.expect("non-empty list checked above"))
}

/// Least-squares discriminator loss: mean((d_real - 1)^2) + mean(d_fake^2).
pub fn lsgan_dsc_loss<S: Scalar>(
    g: &mut Graph<S>,
    d_real: NodeId,
    d_fake: NodeId,
) -> Result<NodeId> {
    let real_shift = g.affine(d_real, S::one(), -S::one());
    let real_sq = g.square(real_shift)?;
    let real_term = g.mean_all(real_sq);
    let fake_sq = g.square(d_fake)?;
    let fake_term = g.mean_all(fake_sq);
    g.add(real_term, fake_term)
}

/// Least-squares generator loss: mean((d_fake - 1)^2).
pub fn lsgan_gen_loss<S: Scalar>(g: &mut Graph<S>, d_fake: NodeId) -> Result<NodeId> {
    let shift = g.affine(d_fake, S::one(), -S::one());
    let sq = g.square(shift)?;
    Ok(g.mean_all(sq))
}

/// Domain-classification cross entropy: mean over the batch of
/// -log(prob[target]), probabilities clamped at `LOG_FLOOR`.
pub fn clsf_loss<S: Scalar>(
    g: &mut Graph<S>,
    class_probs: NodeId,
    targets: &[usize],
) -> Result<NodeId> {
    let shape = g.value(class_probs).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::invalid(
            "clsf_loss",
            format!("expected (batch, classes) probabilities, got {shape:?}"),
        ));
    }
    let (batch, classes) = (shape[0], shape[1]);
    if targets.len() != batch {
        return Err(Error::invalid(
            "clsf_loss",
            format!("{} targets for batch of {batch}", targets.len()),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::invalid(
            "clsf_loss",
            format!("target domain {bad} out of range for {classes} classes"),
        ));
    }
    let mut onehot = vec![S::zero(); batch * classes];
    for (b, &t) in targets.iter().enumerate() {
        onehot[b * classes + t] = S::one();
    }
    let mask = g.constant(Tensor::new(vec![batch, classes], onehot)?);
    let picked = g.mul(class_probs, mask)?;
    let per_sample = g.sum_rows(picked)?;
    let clamped = g.clamp_min(per_sample, S::of_f64(LOG_FLOOR));
    let logs = g.log(clamped);
    let mean = g.mean_all(logs);
    Ok(g.neg(mean))
}

/// Convenience for a batch that shares one target domain.
pub fn clsf_loss_uniform<S: Scalar>(
    g: &mut Graph<S>,
    class_probs: NodeId,
    target: usize,
) -> Result<NodeId> {
    let batch = g.value(class_probs).shape()[0];
    clsf_loss(g, class_probs, &vec![target; batch])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen::<f64>())
    }

    /// Brute-force windowed SSIM of Eq-style local statistics: explicit loops
    /// over every window position with edge-repeating mirror indexing.
    fn ssim_map_bruteforce(
        x: &Tensor<f64>,
        y: &Tensor<f64>,
        cfg: &SsimConfig,
    ) -> Vec<f64> {
        let (_, _, h, w) = x.dims4().unwrap();
        let size = cfg.window.size();
        let pad = size / 2;
        let kernel = cfg.window.kernel::<f64>();
        let kv = kernel.data();
        let reflect = |j: isize, n: usize| -> usize {
            let n = n as isize;
            let m = j.rem_euclid(2 * n);
            (if m < n { m } else { 2 * n - 1 - m }) as usize
        };
        let mut out = vec![0.0; h * w];
        for py in 0..h {
            for px in 0..w {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut mxx = 0.0;
                let mut myy = 0.0;
                let mut mxy = 0.0;
                for wy in 0..size {
                    for wx in 0..size {
                        let iy = reflect(py as isize + wy as isize - pad as isize, h);
                        let ix = reflect(px as isize + wx as isize - pad as isize, w);
                        let kw = kv[wy * size + wx];
                        let xv = x.data()[iy * w + ix];
                        let yv = y.data()[iy * w + ix];
                        mx += kw * xv;
                        my += kw * yv;
                        mxx += kw * xv * xv;
                        myy += kw * yv * yv;
                        mxy += kw * xv * yv;
                    }
                }
                let var_x = mxx - mx * mx;
                let var_y = myy - my * my;
                let cov = mxy - mx * my;
                let num = (2.0 * mx * my + cfg.c1()) * (2.0 * cov + cfg.c2());
                let den = (mx * mx + my * my + cfg.c1()) * (var_x + var_y + cfg.c2());
                out[py * w + px] = num / den;
            }
        }
        out
    }

    #[test]
    fn ssim_map_identity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = image(&[1, 1, 16, 16], &mut rng);
        let mut g = Graph::new();
        let xa = g.constant(x.clone());
        let xb = g.constant(x);
        let map = ssim_map(&mut g, xa, xb, &SsimConfig::default()).unwrap();
        for &v in g.value(map).data() {
            assert!((v - 1.0).abs() < 1e-9, "ssim {v}");
        }
    }

    #[test]
    fn ssim_map_constant_closed_form() {
        // constant images: contrast factor is 1 at zero variance, so the map
        // equals (2 c c' + C1) / (c^2 + c'^2 + C1) everywhere
        let cfg = SsimConfig::default();
        let (c, cp) = (0.3, 0.8);
        let expected = (2.0 * c * cp + cfg.c1()) / (c * c + cp * cp + cfg.c1());
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(vec![1, 1, 12, 12], c));
        let b = g.constant(Tensor::full(vec![1, 1, 12, 12], cp));
        let map = ssim_map(&mut g, a, b, &cfg).unwrap();
        for &v in g.value(map).data() {
            assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
        }
    }

    #[test]
    fn ssim_map_matches_bruteforce_oracle() {
        let cfg = SsimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let x = image(&[1, 1, 16, 16], &mut rng);
            let y = image(&[1, 1, 16, 16], &mut rng);
            let oracle = ssim_map_bruteforce(&x, &y, &cfg);
            let mut g = Graph::new();
            let xa = g.constant(x);
            let ya = g.constant(y);
            let map = ssim_map(&mut g, xa, ya, &cfg).unwrap();
            for (a, e) in g.value(map).data().iter().zip(&oracle) {
                assert!((a - e).abs() < 1e-6, "trial {trial}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn ssim_map_symmetry_and_range() {
        let cfg = SsimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = image(&[1, 1, 16, 16], &mut rng);
        let y = image(&[1, 1, 16, 16], &mut rng);
        let mut g = Graph::new();
        let xa = g.constant(x);
        let ya = g.constant(y);
        let fwd = ssim_map(&mut g, xa, ya, &cfg).unwrap();
        let rev = ssim_map(&mut g, ya, xa, &cfg).unwrap();
        for (a, b) in g.value(fwd).data().iter().zip(g.value(rev).data()) {
            assert!((a - b).abs() < 1e-9);
        }
        for &v in g.value(fwd).data() {
            assert!((-1.0..=1.0).contains(&v), "ssim out of range: {v}");
        }
    }

    #[test]
    fn ssim_loss_identity_and_composition() {
        let cfg = SsimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = image(&[1, 1, 16, 16], &mut rng);
        let mut g = Graph::new();
        let xa = g.constant(x.clone());
        let xb = g.constant(x);
        let loss = ssim_loss(&mut g, xa, xb, &cfg).unwrap();
        assert!(g.value(loss).scalar().unwrap().abs() < 1e-9);

        // random pair: equals -log(mean(1 + oracle map) / 2)
        let a = image(&[1, 1, 16, 16], &mut rng);
        let b = image(&[1, 1, 16, 16], &mut rng);
        let oracle = ssim_map_bruteforce(&a, &b, &cfg);
        let expected = -(oracle.iter().map(|v| 1.0 + v).sum::<f64>() / (2.0 * oracle.len() as f64)).ln();
        let na = g.constant(a);
        let nb = g.constant(b);
        let loss = ssim_loss(&mut g, na, nb, &cfg).unwrap();
        assert!((g.value(loss).scalar().unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn ssim_loss_clamp_keeps_loss_finite() {
        // direct check of the clamp boundary: -log(1e-12)
        let mut g = Graph::<f64>::new();
        let v = g.constant(Tensor::scalar_value(0.0));
        let clamped = g.clamp_min(v, LOG_FLOOR);
        let log = g.log(clamped);
        let loss = g.neg(log);
        let got = g.value(loss).scalar().unwrap();
        assert!((got - 27.631021).abs() < 1e-3, "{got}");
        assert!(got.is_finite());
    }

    #[test]
    fn mcc_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = image(&[1, 1, 8, 8], &mut rng);
        let b = image(&[1, 1, 8, 8], &mut rng);
        let mut g = Graph::new();
        let na = g.constant(a.clone());
        let nb = g.constant(b.clone());

        // perfect reconstructions -> 0
        let zero = mcc_loss(&mut g, &[na, nb], &[na, nb]).unwrap();
        assert_eq!(g.value(zero).scalar().unwrap(), 0.0);

        // one domain off by uniform delta -> delta under mean-abs normalization
        let delta = 0.125;
        let shifted = g.affine(na, 1.0, delta);
        let loss = mcc_loss(&mut g, &[na, nb], &[shifted, nb]).unwrap();
        assert!((g.value(loss).scalar().unwrap() - delta).abs() < 1e-9);

        // random pair vs direct elementwise loop oracle
        let oracle: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.numel() as f64;
        let loss = mcc_loss(&mut g, &[na], &[nb]).unwrap();
        assert!((g.value(loss).scalar().unwrap() - oracle).abs() < 1e-7);

        // length mismatch
        assert!(mcc_loss(&mut g, &[na, nb], &[na]).is_err());
    }

    #[test]
    fn mcc_ssim_additivity() {
        let cfg = SsimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = image(&[1, 1, 16, 16], &mut rng);
        let b = image(&[1, 1, 16, 16], &mut rng);
        let mut g = Graph::new();
        let na = g.constant(a);
        let nb = g.constant(b);

        let perfect = mcc_ssim_loss(&mut g, &[na, nb], &[na, nb], &cfg).unwrap();
        assert!(g.value(perfect).scalar().unwrap().abs() < 1e-9);

        // one perfect pair + one imperfect pair == ssim_loss of the imperfect pair
        let single = ssim_loss(&mut g, na, nb, &cfg).unwrap();
        let combo = mcc_ssim_loss(&mut g, &[na, nb], &[na, na], &cfg).unwrap();
        assert!(
            (g.value(combo).scalar().unwrap() - g.value(single).scalar().unwrap()).abs() < 1e-9
        );

        // three random pairs -> sum of three ssim losses
        let c = image(&[1, 1, 16, 16], &mut rng);
        let nc = g.constant(c);
        let l1 = ssim_loss(&mut g, na, nb, &cfg).unwrap();
        let l2 = ssim_loss(&mut g, nb, nc, &cfg).unwrap();
        let l3 = ssim_loss(&mut g, nc, na, &cfg).unwrap();
        let expected = g.value(l1).scalar().unwrap()
            + g.value(l2).scalar().unwrap()
            + g.value(l3).scalar().unwrap();
        let total = mcc_ssim_loss(&mut g, &[na, nb, nc], &[nb, nc, na], &cfg).unwrap();
        assert!((g.value(total).scalar().unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn lsgan_identities() {
        let mut g = Graph::<f64>::new();
        let ones = g.constant(Tensor::full(vec![1, 1, 4, 4], 1.0));
        let zeros = g.constant(Tensor::zeros(vec![1, 1, 4, 4]));
        let halves = g.constant(Tensor::full(vec![1, 1, 4, 4], 0.5));

        let perfect = lsgan_dsc_loss(&mut g, ones, zeros).unwrap();
        assert_eq!(g.value(perfect).scalar().unwrap(), 0.0);

        let mid = lsgan_dsc_loss(&mut g, halves, halves).unwrap();
        assert!((g.value(mid).scalar().unwrap() - 0.5).abs() < 1e-12);

        let fooled = lsgan_gen_loss(&mut g, ones).unwrap();
        assert_eq!(g.value(fooled).scalar().unwrap(), 0.0);
        let caught = lsgan_gen_loss(&mut g, zeros).unwrap();
        assert!((g.value(caught).scalar().unwrap() - 1.0).abs() < 1e-12);

        // random maps vs elementwise oracle
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let r = image(&[2, 1, 4, 4], &mut rng);
        let f = image(&[2, 1, 4, 4], &mut rng);
        let oracle_dsc = r.data().iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>()
            / r.numel() as f64
            + f.data().iter().map(|v| v * v).sum::<f64>() / f.numel() as f64;
        let oracle_gen =
            f.data().iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / f.numel() as f64;
        let nr = g.constant(r);
        let nf = g.constant(f);
        let d = lsgan_dsc_loss(&mut g, nr, nf).unwrap();
        let gen = lsgan_gen_loss(&mut g, nf).unwrap();
        assert!((g.value(d).scalar().unwrap() - oracle_dsc).abs() < 1e-7);
        assert!((g.value(gen).scalar().unwrap() - oracle_gen).abs() < 1e-7);
    }

    #[test]
    fn clsf_loss_cases() {
        let mut g = Graph::<f64>::new();
        // prob[target] = 1 -> 0
        let certain = g.constant(Tensor::new(vec![1, 4], vec![0.0, 1.0, 0.0, 0.0]).unwrap());
        let zero = clsf_loss_uniform(&mut g, certain, 1).unwrap();
        assert!(g.value(zero).scalar().unwrap().abs() < 1e-9);

        // uniform probs over N=4 -> ln 4
        let uniform = g.constant(Tensor::full(vec![1, 4], 0.25));
        let ln4 = clsf_loss_uniform(&mut g, uniform, 2).unwrap();
        assert!((g.value(ln4).scalar().unwrap() - 4.0f64.ln()).abs() < 1e-9);

        // random softmax outputs vs direct cross-entropy oracle
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let logits = Tensor::<f64>::from_fn(vec![3, 5], |_| rng.gen::<f64>() * 4.0 - 2.0);
        let targets = [4usize, 0, 2];
        let ln = g.constant(logits.clone());
        let probs = g.softmax_rows(ln).unwrap();
        let loss = clsf_loss(&mut g, probs, &targets).unwrap();
        let mut oracle = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let row = &logits.data()[b * 5..][..5];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
            oracle -= row[t] - lse;
        }
        oracle /= 3.0;
        assert!((g.value(loss).scalar().unwrap() - oracle).abs() < 1e-7);

        // invalid target
        assert!(clsf_loss_uniform(&mut g, uniform, 4).is_err());
    }

    #[test]
    fn aggregate_totals() {
        let w = LossWeights::default();
        let zero = aggregate(LossParts::default(), w).unwrap();
        assert_eq!(zero.total_gen, 0.0);
        assert_eq!(zero.total_dsc, 0.0);

        let silent = LossWeights {
            mcc: 0.0,
            mcc_ssim: 0.0,
            gan: 0.0,
            clsf: 0.0,
        };
        let parts = LossParts {
            mcc: 0.9,
            mcc_ssim: 0.8,
            gan_gen: 0.7,
            gan_dsc: 0.6,
            clsf_real: 0.5,
            clsf_fake: 0.4,
        };
        assert_eq!(aggregate(parts, silent).unwrap().total_gen, 0.0);

        let mcc_only = LossWeights {
            mcc: 10.0,
            mcc_ssim: 0.0,
            gan: 0.0,
            clsf: 0.0,
        };
        let r = aggregate(
            LossParts {
                mcc: 0.3,
                ..Default::default()
            },
            mcc_only,
        )
        .unwrap();
        assert!((r.total_gen - 3.0).abs() < 1e-12);

        let bad = LossParts {
            gan_gen: f64::NAN,
            ..Default::default()
        };
        let err = aggregate(bad, w).unwrap_err().to_string();
        assert!(err.contains("gan_gen"), "{err}");
    }
}
