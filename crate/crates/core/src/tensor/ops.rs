//! Differentiable primitives: conv2d, batch norm, ReLU, pixel shuffle,
//! channel concat, 2x2 max-pool and bilinear x2 upsampling.
//!
//! Every forward has an explicit backward; gradients are checked against
//! central finite differences in the test suite.

use super::{BatchNormState, ConvParams, Mode, Scalar, Tensor};
use crate::error::{CoreError, Result};

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    // cols: (c*k*k, h*w), zero "same" padding, stride 1
    let r = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let xc = &x[ci * hw..(ci + 1) * hw];
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                let out = &mut cols[row * hw..(row + 1) * hw];
                let oi = di as isize - r;
                let oj = dj as isize - r;
                for i in 0..h as isize {
                    let si = i + oi;
                    let dst = &mut out[(i as usize) * w..(i as usize + 1) * w];
                    if si < 0 || si >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &xc[(si as usize) * w..(si as usize + 1) * w];
                    for j in 0..w as isize {
                        let sj = j + oj;
                        dst[j as usize] = if sj < 0 || sj >= w as isize {
                            T::zero()
                        } else {
                            src[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let xc = &mut x[ci * hw..(ci + 1) * hw];
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                let src = &cols[row * hw..(row + 1) * hw];
                let oi = di as isize - r;
                let oj = dj as isize - r;
                for i in 0..h as isize {
                    let si = i + oi;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    for j in 0..w as isize {
                        let sj = j + oj;
                        if sj < 0 || sj >= w as isize {
                            continue;
                        }
                        xc[(si as usize) * w + sj as usize] += src[(i as usize) * w + j as usize];
                    }
                }
            }
        }
    }
}

/// Stride-1 "same"-padded 2-D convolution: (N,C_in,H,W) -> (N,C_out,H,W).
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (n, c_in, h, w) = x.dims4()?;
    let k = p.kernel();
    if c_in != p.c_in() {
        return Err(CoreError::shape(format!(
            "conv2d: input has {} channels, params expect {}",
            c_in,
            p.c_in()
        )));
    }
    if h < k || w < k {
        return Err(CoreError::shape(format!(
            "conv2d: spatial dims ({h},{w}) smaller than kernel {k}"
        )));
    }
    let c_out = p.c_out();
    let hw = h * w;
    let ckk = c_in * k * k;
    let mut cols = vec![T::zero(); ckk * hw];
    let mut y = Tensor::zeros(&[n, c_out, h, w]);
    for b in 0..n {
        im2col(&x.data()[b * c_in * hw..], c_in, h, w, k, &mut cols);
        let out = &mut y.data_mut()[b * c_out * hw..(b + 1) * c_out * hw];
        T::gemm(c_out, ckk, hw, T::one(), p.weights.data(), &cols, T::zero(), out);
        for co in 0..c_out {
            let bv = p.bias.data()[co];
            out[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(y)
}

/// Gradients of [`conv2d`] w.r.t. input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvParams<T>)> {
    let (n, c_in, h, w) = x.dims4()?;
    let (gn, gc, gh, gw) = grad_out.dims4()?;
    let k = p.kernel();
    let c_out = p.c_out();
    if (gn, gc, gh, gw) != (n, c_out, h, w) || c_in != p.c_in() {
        return Err(CoreError::shape("conv2d_backward: inconsistent shapes"));
    }
    let hw = h * w;
    let ckk = c_in * k * k;
    let mut cols = vec![T::zero(); ckk * hw];
    let mut gcols = vec![T::zero(); ckk * hw];
    let mut grad_x = Tensor::zeros(&[n, c_in, h, w]);
    let mut grad_p = ConvParams::zeros(c_out, c_in, k);
    for b in 0..n {
        im2col(&x.data()[b * c_in * hw..], c_in, h, w, k, &mut cols);
        let go = &grad_out.data()[b * c_out * hw..(b + 1) * c_out * hw];
        // grad_w += go (c_out,hw) * cols^T (hw,ckk)
        T::gemm_strided(
            c_out, hw, ckk, T::one(),
            go, hw as isize, 1,
            &cols, 1, hw as isize,
            T::one(), grad_p.weights.data_mut(),
        );
        // grad_cols = w^T (ckk,c_out) * go (c_out,hw)
        T::gemm_strided(
            ckk, c_out, hw, T::one(),
            p.weights.data(), 1, ckk as isize,
            go, hw as isize, 1,
            T::zero(), &mut gcols,
        );
        col2im(&gcols, c_in, h, w, k, &mut grad_x.data_mut()[b * c_in * hw..(b + 1) * c_in * hw]);
        for co in 0..c_out {
            let s = go[co * hw..(co + 1) * hw].iter().fold(T::zero(), |s, &v| s + v);
            grad_p.bias.data_mut()[co] += s;
        }
    }
    Ok((grad_x, grad_p))
}

/// Saved intermediates for the batch norm backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Batch normalization over (N,H,W) per channel. Train mode updates the
/// running statistics in `s`; eval mode uses them.
pub fn batchnorm2d<T: Scalar>(
    x: &Tensor<T>,
    s: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if c != s.channels() {
        return Err(CoreError::shape(format!(
            "batchnorm2d: {} channels vs state {}",
            c,
            s.channels()
        )));
    }
    let hw = h * w;
    let m = T::from_f64((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    let mut y = Tensor::zeros(&[n, c, h, w]);
    for ci in 0..c {
        let (mu, var) = match mode {
            Mode::Train => {
                let mut sum = T::zero();
                let mut sq = T::zero();
                for b in 0..n {
                    let xs = &x.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw];
                    for &v in xs {
                        sum += v;
                        sq += v * v;
                    }
                }
                let mu = sum / m;
                let var = sq / m - mu * mu;
                let var = if var < T::zero() { T::zero() } else { var };
                let mom = s.momentum;
                s.running_mean.data_mut()[ci] = (T::one() - mom) * s.running_mean.data()[ci] + mom * mu;
                s.running_var.data_mut()[ci] = (T::one() - mom) * s.running_var.data()[ci] + mom * var;
                (mu, var)
            }
            Mode::Eval => (s.running_mean.data()[ci], s.running_var.data()[ci]),
        };
        let istd = T::one() / (var + s.eps).sqrt();
        mean[ci] = mu;
        inv_std[ci] = istd;
        let g = s.gamma.data()[ci];
        let bt = s.beta.data()[ci];
        for b in 0..n {
            let xs = &x.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw];
            let ys = &mut y.data_mut()[(b * c + ci) * hw..(b * c + ci + 1) * hw];
            for (yv, &xv) in ys.iter_mut().zip(xs) {
                *yv = g * (xv - mu) * istd + bt;
            }
        }
    }
    Ok((y, BnCache { mean, inv_std, mode }))
}

/// Gradients of [`batchnorm2d`]: returns (grad_x, grad_gamma, grad_beta).
pub fn batchnorm2d_backward<T: Scalar>(
    x: &Tensor<T>,
    s: &BatchNormState<T>,
    cache: &BnCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if grad_out.shape() != x.shape() {
        return Err(CoreError::shape("batchnorm2d_backward: shape mismatch"));
    }
    let hw = h * w;
    let m = T::from_f64((n * hw) as f64);
    let mut grad_x = Tensor::zeros(&[n, c, h, w]);
    let mut grad_gamma = Tensor::zeros(&[c]);
    let mut grad_beta = Tensor::zeros(&[c]);
    for ci in 0..c {
        let mu = cache.mean[ci];
        let istd = cache.inv_std[ci];
        let g = s.gamma.data()[ci];
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..n {
            let xs = &x.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw];
            let gs = &grad_out.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw];
            for (&xv, &dy) in xs.iter().zip(gs) {
                sum_dy += dy;
                sum_dy_xhat += dy * (xv - mu) * istd;
            }
        }
        grad_gamma.data_mut()[ci] = sum_dy_xhat;
        grad_beta.data_mut()[ci] = sum_dy;
        for b in 0..n {
            let xs = &x.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw];
            let gs = &grad_out.data()[(b * c + ci) * hw..(b * c + ci + 1) * hw];
            let dst = &mut grad_x.data_mut()[(b * c + ci) * hw..(b * c + ci + 1) * hw];
            match cache.mode {
                Mode::Train => {
                    for ((dx, &xv), &dy) in dst.iter_mut().zip(xs).zip(gs) {
                        let xhat = (xv - mu) * istd;
                        *dx = g * istd / m * (m * dy - sum_dy - xhat * sum_dy_xhat);
                    }
                }
                Mode::Eval => {
                    for (dx, &dy) in dst.iter_mut().zip(gs) {
                        *dx = g * istd * dy;
                    }
                }
            }
        }
    }
    Ok((grad_x, grad_gamma, grad_beta))
}

/// Elementwise max(0, x).
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of [`relu`]: masks the cotangent by the sign of the input.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(x.shape(), grad_out.shape());
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}

/// (N,C,H,W) -> (N,4C,H/2,W/2); each 2x2 block becomes 4 consecutive
/// channels in (TL, TR, BL, BR) order: out channel = 4*c + quadrant.
pub fn space_to_depth<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CoreError::shape(format!("space_to_depth: odd spatial dims ({h},{w})")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, 4 * c, h2, w2]);
    for b in 0..n {
        for ci in 0..c {
            let src = &x.data()[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
            for q in 0..4 {
                let (oi, oj) = (q / 2, q % 2);
                let co = 4 * ci + q;
                let dst = &mut y.data_mut()[(b * 4 * c + co) * h2 * w2..(b * 4 * c + co + 1) * h2 * w2];
                for i in 0..h2 {
                    for j in 0..w2 {
                        dst[i * w2 + j] = src[(2 * i + oi) * w + 2 * j + oj];
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Exact inverse of [`space_to_depth`].
pub fn depth_to_space<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c4, h2, w2) = x.dims4()?;
    if c4 % 4 != 0 {
        return Err(CoreError::shape(format!("depth_to_space: channels {c4} not divisible by 4")));
    }
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let mut y = Tensor::zeros(&[n, c, h, w]);
    for b in 0..n {
        for ci in 0..c {
            let dst = &mut y.data_mut()[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
            for q in 0..4 {
                let (oi, oj) = (q / 2, q % 2);
                let co = 4 * ci + q;
                let src = &x.data()[(b * c4 + co) * h2 * w2..(b * c4 + co + 1) * h2 * w2];
                for i in 0..h2 {
                    for j in 0..w2 {
                        dst[(2 * i + oi) * w + 2 * j + oj] = src[i * w2 + j];
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Stack channels, `a` first. Non-channel dims must match.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(CoreError::shape(format!(
            "concat_channels: non-channel dims differ {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut y = Tensor::zeros(&[n, ca + cb, h, w]);
    let hw = h * w;
    for bi in 0..n {
        let ya = &mut y.data_mut()[bi * (ca + cb) * hw..];
        ya[..ca * hw].copy_from_slice(&a.data()[bi * ca * hw..(bi + 1) * ca * hw]);
        ya[ca * hw..(ca + cb) * hw].copy_from_slice(&b.data()[bi * cb * hw..(bi + 1) * cb * hw]);
    }
    Ok(y)
}

/// Take channels [lo, hi) of x.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, lo: usize, hi: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if lo > hi || hi > c {
        return Err(CoreError::shape(format!("slice_channels: [{lo},{hi}) out of {c}")));
    }
    let hw = h * w;
    let cs = hi - lo;
    let mut y = Tensor::zeros(&[n, cs, h, w]);
    for b in 0..n {
        y.data_mut()[b * cs * hw..(b + 1) * cs * hw]
            .copy_from_slice(&x.data()[(b * c + lo) * hw..(b * c + hi) * hw]);
    }
    Ok(y)
}

/// 2x2 max-pool, stride 2. Returns pooled tensor and argmax indices
/// (flat index into the input plane); ties go to the first index scanned.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CoreError::shape(format!("maxpool2: odd spatial dims ({h},{w})")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, h2, w2]);
    let mut arg = vec![0usize; n * c * h2 * w2];
    let hw = h * w;
    for bc in 0..n * c {
        let src = &x.data()[bc * hw..(bc + 1) * hw];
        for i in 0..h2 {
            for j in 0..w2 {
                let mut best = src[2 * i * w + 2 * j];
                let mut bidx = 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (2 * i + di) * w + 2 * j + dj;
                    if src[idx] > best {
                        best = src[idx];
                        bidx = idx;
                    }
                }
                y.data_mut()[bc * h2 * w2 + i * w2 + j] = best;
                arg[bc * h2 * w2 + i * w2 + j] = bidx;
            }
        }
    }
    Ok((y, arg))
}

/// Backward of [`maxpool2`]: routes gradient to the argmax positions.
pub fn maxpool2_backward<T: Scalar>(
    input_shape: &[usize],
    arg: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_shape);
    let (h, w) = (input_shape[2], input_shape[3]);
    let hw = h * w;
    let (h2, w2) = (grad_out.shape()[2], grad_out.shape()[3]);
    for bc in 0..input_shape[0] * input_shape[1] {
        for p in 0..h2 * w2 {
            gx.data_mut()[bc * hw + arg[bc * h2 * w2 + p]] += grad_out.data()[bc * h2 * w2 + p];
        }
    }
    gx
}

// Interpolation source positions and weights for bilinear x2 with
// half-pixel centers (align_corners = false), clamped at borders.
fn bilerp_axis(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            let pos = (i as f64 + 0.5) / 2.0 - 0.5;
            let p0 = pos.floor();
            let frac = pos - p0;
            let a = (p0.max(0.0) as usize).min(in_len - 1);
            let b = ((p0 as isize + 1).max(0) as usize).min(in_len - 1);
            (a, b, frac)
        })
        .collect()
}

/// Bilinear x2 upsampling: (N,C,H,W) -> (N,C,2H,2W).
pub fn bilinear_upsample2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let rows = bilerp_axis(oh, h);
    let cols = bilerp_axis(ow, w);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    for bc in 0..n * c {
        let src = &x.data()[bc * h * w..(bc + 1) * h * w];
        let dst = &mut y.data_mut()[bc * oh * ow..(bc + 1) * oh * ow];
        for (i, &(r0, r1, fi)) in rows.iter().enumerate() {
            for (j, &(c0, c1, fj)) in cols.iter().enumerate() {
                let v00 = src[r0 * w + c0].to_f64_();
                let v01 = src[r0 * w + c1].to_f64_();
                let v10 = src[r1 * w + c0].to_f64_();
                let v11 = src[r1 * w + c1].to_f64_();
                let v = v00 * (1.0 - fi) * (1.0 - fj)
                    + v01 * (1.0 - fi) * fj
                    + v10 * fi * (1.0 - fj)
                    + v11 * fi * fj;
                dst[i * ow + j] = T::from_f64(v);
            }
        }
    }
    Ok(y)
}

/// Backward (transpose) of [`bilinear_upsample2`].
pub fn bilinear_upsample2_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = grad_out.dims4()?;
    let (h, w) = (input_shape[2], input_shape[3]);
    if oh != 2 * h || ow != 2 * w {
        return Err(CoreError::shape("bilinear backward: shape mismatch"));
    }
    let rows = bilerp_axis(oh, h);
    let cols = bilerp_axis(ow, w);
    let mut gx = Tensor::zeros(input_shape);
    for bc in 0..n * c {
        let go = &grad_out.data()[bc * oh * ow..(bc + 1) * oh * ow];
        let dst = &mut gx.data_mut()[bc * h * w..(bc + 1) * h * w];
        for (i, &(r0, r1, fi)) in rows.iter().enumerate() {
            for (j, &(c0, c1, fj)) in cols.iter().enumerate() {
                let g = go[i * ow + j].to_f64_();
                dst[r0 * w + c0] += T::from_f64(g * (1.0 - fi) * (1.0 - fj));
                dst[r0 * w + c1] += T::from_f64(g * (1.0 - fi) * fj);
                dst[r1 * w + c0] += T::from_f64(g * fi * (1.0 - fj));
                dst[r1 * w + c1] += T::from_f64(g * fi * fj);
            }
        }
    }
    Ok(gx)
}
