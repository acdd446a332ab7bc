//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one parameter list.
#[derive(Clone)]
pub struct AdamState<S: Scalar> {
    pub hyper: AdamHyper,
    pub t: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(hyper: AdamHyper, shapes: &[Vec<usize>]) -> Self {
        AdamState {
            hyper,
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    /// One bias-corrected update over aligned (param, grad) pairs.
    /// A missing grad entry leaves that parameter (and its moments) untouched.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Option<&[S]>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid(
                "adam_step",
                format!(
                    "parameter/gradient/state count mismatch: {} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, grad) in grads.iter().enumerate() {
            if let Some(g) = grad {
                if params[i].numel() != g.len() {
                    return Err(Error::shape("adam_step", params[i].shape(), &[g.len()]));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        term: format!("gradient of parameter {i}"),
                    });
                }
            }
        }

        self.t += 1;
        let b1 = S::of_f64(self.hyper.beta1);
        let b2 = S::of_f64(self.hyper.beta2);
        let lr = S::of_f64(self.hyper.lr);
        let eps = S::of_f64(self.hyper.eps);
        let one = S::one();
        let bc1 = one - S::of_f64(self.hyper.beta1.powi(self.t as i32));
        let bc2 = one - S::of_f64(self.hyper.beta2.powi(self.t as i32));

        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = match grad {
                Some(g) => *g,
                None => continue,
            };
            let pd = param.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = b1 * md[i] + (one - b1) * g[i];
                vd[i] = b2 * vd[i] + (one - b2) * g[i] * g[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
