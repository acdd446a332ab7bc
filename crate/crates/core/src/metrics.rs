//! Evaluation metrics, computed in f64 regardless of training precision.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{ssim_map, SsimConfig};
use crate::tensor::{Scalar, Tensor};

/// Normalized mean squared error: ||x - ref||^2 / ||ref||^2.
pub fn nmse<S: Scalar>(x: &Tensor<S>, reference: &Tensor<S>) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(Error::shape("nmse", x.shape(), reference.shape()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, r) in x.data().iter().zip(reference.data()) {
        let (a, r) = (a.as_f64(), r.as_f64());
        num += (a - r) * (a - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(Error::invalid("nmse", "reference image has zero energy"));
    }
    Ok(num / den)
}

/// Mean of the per-pixel SSIM map between two images of shape (c, h, w)
/// or (batch, c, h, w).
pub fn mean_ssim<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, cfg: &SsimConfig) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape("mean_ssim", x.shape(), y.shape()));
    }
    let (xf, yf) = match x.shape().len() {
        3 => {
            let mut shape = vec![1];
            shape.extend_from_slice(x.shape());
            (
                x.cast::<f64>().reshaped(shape.clone())?,
                y.cast::<f64>().reshaped(shape)?,
            )
        }
        4 => (x.cast::<f64>(), y.cast::<f64>()),
        _ => {
            return Err(Error::invalid(
                "mean_ssim",
                format!("expected rank 3 or 4 images, got {:?}", x.shape()),
            ))
        }
    };
    let mut g = Graph::<f64>::new();
    let nx = g.constant(xf);
    let ny = g.constant(yf);
    let map = ssim_map(&mut g, nx, ny, cfg)?;
    let mean = g.mean_all(map);
    g.value(mean).scalar()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nmse_identity_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = Tensor::<f64>::from_fn(vec![1, 8, 8], |_| rng.gen::<f64>() + 0.1);
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);

        // x = 2*ref -> ||ref||^2/||ref||^2 = 1
        let doubled = x.map(|v| 2.0 * v);
        assert!((nmse(&doubled, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::<f64>::from_fn(vec![1, 6, 6], |_| rng.gen::<f64>());
        let r = Tensor::<f64>::from_fn(vec![1, 6, 6], |_| rng.gen::<f64>() + 0.2);
        let base = nmse(&x, &r).unwrap();
        for a in [2.0, -0.7, 1e3] {
            let xs = x.map(|v| a * v);
            let rs = r.map(|v| a * v);
            assert!((nmse(&xs, &rs).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn nmse_matches_direct_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = Tensor::<f64>::from_fn(vec![2, 5, 5], |_| rng.gen::<f64>());
        let r = Tensor::<f64>::from_fn(vec![2, 5, 5], |_| rng.gen::<f64>() + 0.1);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..x.numel() {
            num += (x.data()[i] - r.data()[i]).powi(2);
            den += r.data()[i].powi(2);
        }
        assert!((nmse(&x, &r).unwrap() - num / den).abs() < 1e-9);
    }

    #[test]
    fn nmse_zero_reference_errors() {
        let x = Tensor::<f32>::full(vec![1, 2, 2], 0.5);
        let zero = Tensor::<f32>::zeros(vec![1, 2, 2]);
        assert!(nmse(&x, &zero).is_err());
    }

    #[test]
    fn mean_ssim_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = Tensor::<f32>::from_fn(vec![1, 16, 16], |_| rng.gen::<f32>());
        let s = mean_ssim(&x, &x, &SsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-7, "{s}");
    }
}
