//! BT.601 full-range RGB <-> YCbCr conversion.
//!
//! Chroma channels carry a 0.5 offset so all three planes live in [0, 1]
//! for valid RGB input. The inverse is algebraically exact, so round trips
//! hold to machine precision.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

fn check3<S: Scalar>(op: &str, image: &Tensor<S>) -> Result<(usize, usize)> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::invalid(op, format!("expected 3 channels, got {c}")));
    }
    Ok((h, w))
}

pub fn rgb_to_ycbcr<S: Scalar>(image: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w) = check3("rgb_to_ycbcr", image)?;
    let hw = h * w;
    let d = image.data();
    let mut out = vec![S::zero(); 3 * hw];
    for i in 0..hw {
        let r = d[i].as_f64();
        let g = d[hw + i].as_f64();
        let b = d[2 * hw + i].as_f64();
        let y = KR * r + KG * g + KB * b;
        let cb = (b - y) / (2.0 * (1.0 - KB)) + 0.5;
        let cr = (r - y) / (2.0 * (1.0 - KR)) + 0.5;
        out[i] = S::of_f64(y);
        out[hw + i] = S::of_f64(cb);
        out[2 * hw + i] = S::of_f64(cr);
    }
    Tensor::new(vec![3, h, w], out)
}

pub fn ycbcr_to_rgb<S: Scalar>(image: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w) = check3("ycbcr_to_rgb", image)?;
    let hw = h * w;
    let d = image.data();
    let mut out = vec![S::zero(); 3 * hw];
    for i in 0..hw {
        let y = d[i].as_f64();
        let cb = d[hw + i].as_f64() - 0.5;
        let cr = d[2 * hw + i].as_f64() - 0.5;
        let r = y + 2.0 * (1.0 - KR) * cr;
        let b = y + 2.0 * (1.0 - KB) * cb;
        let g = (y - KR * r - KB * b) / KG;
        out[i] = S::of_f64(r);
        out[hw + i] = S::of_f64(g);
        out[2 * hw + i] = S::of_f64(b);
    }
    Tensor::new(vec![3, h, w], out)
}
