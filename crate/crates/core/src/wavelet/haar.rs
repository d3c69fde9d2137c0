//! Single-level 2-D Haar transform, the baseline resampling operator.
//!
//! The four sub-bands (LL, LH, HL, HH) are packed along the channel axis in
//! that order: input (N, C, H, W) -> output (N, 4C, H/2, W/2). The basis is
//! orthonormal, so the inverse equals the adjoint and energy is preserved.

use crate::error::{CoreError, Result};
use crate::tensor::{Scalar, Tensor};

/// Orthonormal Haar analysis, one level.
pub fn haar_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CoreError::shape(format!(
            "haar_forward needs even spatial dims, got ({h},{w})"
        )));
    }
    let (h2, w2) = (h / 2, w / 2);
    let half = T::from_f64(0.5);
    let mut y = Tensor::zeros(&[n, 4 * c, h2, w2]);
    let plane_in = h * w;
    let plane_out = h2 * w2;
    for b in 0..n {
        for ch in 0..c {
            let src = &x.data()[(b * c + ch) * plane_in..(b * c + ch + 1) * plane_in];
            for i in 0..h2 {
                for j in 0..w2 {
                    let a = src[2 * i * w + 2 * j];
                    let bb = src[2 * i * w + 2 * j + 1];
                    let cc = src[(2 * i + 1) * w + 2 * j];
                    let d = src[(2 * i + 1) * w + 2 * j + 1];
                    let o = i * w2 + j;
                    let base = b * 4 * c * plane_out;
                    let dst = y.data_mut();
                    dst[base + ch * plane_out + o] = (a + bb + cc + d) * half; // LL
                    dst[base + (c + ch) * plane_out + o] = (a + bb - cc - d) * half; // LH (vertical detail)
                    dst[base + (2 * c + ch) * plane_out + o] = (a - bb + cc - d) * half; // HL
                    dst[base + (3 * c + ch) * plane_out + o] = (a - bb - cc + d) * half; // HH
                }
            }
        }
    }
    Ok(y)
}

/// Exact inverse (= adjoint) of [`haar_forward`]: (N, 4C, H, W) -> (N, C, 2H, 2W).
pub fn haar_inverse<T: Scalar>(y: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c4, h2, w2) = y.dims4()?;
    if c4 % 4 != 0 {
        return Err(CoreError::shape(format!(
            "haar_inverse needs a channel count divisible by 4, got {c4}"
        )));
    }
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let half = T::from_f64(0.5);
    let mut x = Tensor::zeros(&[n, c, h, w]);
    let plane_in = h2 * w2;
    let plane_out = h * w;
    for b in 0..n {
        for ch in 0..c {
            let base = b * c4 * plane_in;
            let dst = &mut x.data_mut()[(b * c + ch) * plane_out..(b * c + ch + 1) * plane_out];
            for i in 0..h2 {
                for j in 0..w2 {
                    let o = i * w2 + j;
                    let ll = y.data()[base + ch * plane_in + o];
                    let lh = y.data()[base + (c + ch) * plane_in + o];
                    let hl = y.data()[base + (2 * c + ch) * plane_in + o];
                    let hh = y.data()[base + (3 * c + ch) * plane_in + o];
                    dst[2 * i * w + 2 * j] = (ll + lh + hl + hh) * half;
                    dst[2 * i * w + 2 * j + 1] = (ll + lh - hl - hh) * half;
                    dst[(2 * i + 1) * w + 2 * j] = (ll - lh + hl - hh) * half;
                    dst[(2 * i + 1) * w + 2 * j + 1] = (ll - lh - hl + hh) * half;
                }
            }
        }
    }
    Ok(x)
}
