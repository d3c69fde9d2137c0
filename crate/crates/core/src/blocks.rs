//! Encoder/decoder blocks.
//!
//! Wave-Block: spectral decomposition (DTCWT level 1 or Haar), lossless
//! rearrangement of the sub-bands into channels, then conv + BN + ReLU. Maps
//! (C,H,W) -> (2C,H/2,W/2); everything before the conv is exactly invertible.
//!
//! iWave-Block: a 1x1 conv synthesizes sub-band coefficients, the
//! rearrangement is undone, the inverse transform restores resolution, and a
//! 3x3 conv fuses with the skip connection.
//!
//! ConvBlock / Linear-I are the max-pool and bilinear-interpolation baselines.

use crate::error::{CoreError, Result};
use crate::tensor::ops::{
    batchnorm2d, batchnorm2d_backward, bilinear_upsample2, bilinear_upsample2_backward, BnCache,
    concat_channels, conv2d, conv2d_backward, depth_to_space, maxpool2, maxpool2_backward, relu,
    relu_backward, slice_channels, space_to_depth,
};
use crate::tensor::{BatchNormState, ConvParams, Mode, Scalar, Tensor};
use crate::wavelet::{
    dtcwt_forward, dtcwt_forward_adjoint, dtcwt_inverse, dtcwt_inverse_adjoint, haar_forward,
    haar_inverse, FilterBank, Subbands, WaveletKind,
};
use serde::{Deserialize, Serialize};

/// How the Wave-Block conv treats the sub-band channel groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WaveConv {
    /// One dense conv over all sub-band channels.
    #[default]
    Full,
    /// One conv with tied weights applied to each 2C-channel group, summed.
    GroupedShared,
}

/// Fold (lowpass, level-1 highpass) into a single channel-stacked tensor.
///
/// Channel layout of the output (N, 16C, H/2, W/2):
/// [space_to_depth(lowpass): 4C | real highpass: 6C | imaginary highpass: 6C],
/// orientation-major within each highpass group.
pub fn rearrange_forward<T: Scalar>(lowpass: &Tensor<T>, highpass: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = lowpass.dims4()?;
    let hs = highpass.shape();
    if hs != [n, 2, 6, c, h / 2, w / 2] {
        return Err(CoreError::shape(format!(
            "rearrange_forward: highpass {:?} inconsistent with lowpass {:?}",
            hs,
            lowpass.shape()
        )));
    }
    let (h2, w2) = (h / 2, w / 2);
    let plane = h2 * w2;
    let low = space_to_depth(lowpass)?;
    let mut y = Tensor::zeros(&[n, 16 * c, h2, w2]);
    for b in 0..n {
        let dst = &mut y.data_mut()[b * 16 * c * plane..(b + 1) * 16 * c * plane];
        dst[..4 * c * plane].copy_from_slice(&low.data()[b * 4 * c * plane..(b + 1) * 4 * c * plane]);
        // highpass is already (reim, orient, ch)-major: a straight copy
        dst[4 * c * plane..].copy_from_slice(
            &highpass.data()[b * 12 * c * plane..(b + 1) * 12 * c * plane],
        );
    }
    Ok(y)
}

/// Exact inverse of [`rearrange_forward`].
pub fn rearrange_inverse<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c16, h2, w2) = x.dims4()?;
    if c16 % 16 != 0 {
        return Err(CoreError::shape(format!(
            "rearrange_inverse: channels {c16} not divisible by 16"
        )));
    }
    let c = c16 / 16;
    let plane = h2 * w2;
    let mut low4 = Tensor::zeros(&[n, 4 * c, h2, w2]);
    let mut highpass = Tensor::zeros(&[n, 2, 6, c, h2, w2]);
    for b in 0..n {
        let src = &x.data()[b * c16 * plane..(b + 1) * c16 * plane];
        low4.data_mut()[b * 4 * c * plane..(b + 1) * 4 * c * plane]
            .copy_from_slice(&src[..4 * c * plane]);
        highpass.data_mut()[b * 12 * c * plane..(b + 1) * 12 * c * plane]
            .copy_from_slice(&src[4 * c * plane..]);
    }
    Ok((depth_to_space(&low4)?, highpass))
}

// conv over the rearranged sub-band tensor, honoring the grouping mode
fn wave_conv_forward<T: Scalar>(
    r: &Tensor<T>,
    conv: &ConvParams<T>,
    mode: WaveConv,
) -> Result<Tensor<T>> {
    match mode {
        WaveConv::Full => conv2d(r, conv),
        WaveConv::GroupedShared => {
            let (_, c_all, _, _) = r.dims4()?;
            let g = conv.c_in();
            if c_all % g != 0 {
                return Err(CoreError::shape(format!(
                    "grouped conv: {c_all} channels not divisible by group width {g}"
                )));
            }
            let mut acc: Option<Tensor<T>> = None;
            for gi in 0..c_all / g {
                let part = slice_channels(r, gi * g, (gi + 1) * g)?;
                let y = conv2d(&part, conv)?;
                acc = Some(match acc {
                    None => y,
                    Some(a) => a.add(&y)?,
                });
            }
            let mut y = acc.unwrap();
            // the shared bias must enter once, not once per group
            let extra = T::from_f64((c_all / g - 1) as f64);
            let (nb, co, hh, ww) = y.dims4()?;
            for b in 0..nb {
                for ci in 0..co {
                    let bv = conv.bias.data()[ci] * extra;
                    y.data_mut()[(b * co + ci) * hh * ww..(b * co + ci + 1) * hh * ww]
                        .iter_mut()
                        .for_each(|v| *v -= bv);
                }
            }
            Ok(y)
        }
    }
}

fn wave_conv_backward<T: Scalar>(
    r: &Tensor<T>,
    conv: &ConvParams<T>,
    mode: WaveConv,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvParams<T>)> {
    match mode {
        WaveConv::Full => conv2d_backward(r, conv, grad_out),
        WaveConv::GroupedShared => {
            let (_, c_all, _, _) = r.dims4()?;
            let g = conv.c_in();
            let ngroups = c_all / g;
            let mut grad_r = Tensor::zeros(r.shape());
            let mut grad_p = ConvParams::zeros(conv.c_out(), g, conv.kernel());
            let (n, _, h, w) = r.dims4()?;
            let plane = h * w;
            for gi in 0..ngroups {
                let part = slice_channels(r, gi * g, (gi + 1) * g)?;
                let (gx, gp) = conv2d_backward(&part, conv, grad_out)?;
                for b in 0..n {
                    let dst_off = (b * c_all + gi * g) * plane;
                    let src_off = b * g * plane;
                    grad_r.data_mut()[dst_off..dst_off + g * plane]
                        .copy_from_slice(&gx.data()[src_off..src_off + g * plane]);
                }
                grad_p.weights = grad_p.weights.add(&gp.weights)?;
                if gi == 0 {
                    grad_p.bias = gp.bias; // bias enters the forward once
                }
            }
            Ok((grad_r, grad_p))
        }
    }
}

#[derive(Debug, Clone)]
pub struct WaveBlockParams<T> {
    pub conv: ConvParams<T>,
    pub bn: BatchNormState<T>,
    pub wavelet: WaveletKind,
    pub conv_mode: WaveConv,
}

impl<T: Scalar> WaveBlockParams<T> {
    /// Expected conv input channels for a block with `c_in` input channels.
    pub fn conv_in_channels(c_in: usize, wavelet: WaveletKind, mode: WaveConv) -> usize {
        match mode {
            WaveConv::Full => wavelet.spectral_channel_factor() * c_in,
            WaveConv::GroupedShared => 2 * c_in,
        }
    }
}

#[derive(Debug)]
pub struct WaveBlockCache<T> {
    input_shape: Vec<usize>,
    /// The pre-conv rearranged sub-band tensor (the invertible representation).
    pub rearranged: Tensor<T>,
    conv_out: Tensor<T>,
    bn_cache: BnCache<T>,
    bn_out: Tensor<T>,
}

/// Spectral down-sampling: (N,C,H,W) -> (N,2C,H/2,W/2).
pub fn wave_block_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut WaveBlockParams<T>,
    mode: Mode,
    fb: &FilterBank,
) -> Result<(Tensor<T>, WaveBlockCache<T>)> {
    let r = match p.wavelet {
        WaveletKind::Dtcwt => {
            let s = dtcwt_forward(x, 1, fb)?;
            rearrange_forward(&s.lowpass, &s.highpass[0])?
        }
        WaveletKind::Haar => haar_forward(x)?,
    };
    let z = wave_conv_forward(&r, &p.conv, p.conv_mode)?;
    let (bn_out, bn_cache) = batchnorm2d(&z, &mut p.bn, mode)?;
    let y = relu(&bn_out);
    Ok((
        y,
        WaveBlockCache {
            input_shape: x.shape().to_vec(),
            rearranged: r,
            conv_out: z,
            bn_cache,
            bn_out,
        },
    ))
}

#[derive(Debug)]
pub struct WaveBlockGrads<T> {
    pub conv: ConvParams<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn wave_block_backward<T: Scalar>(
    cache: &WaveBlockCache<T>,
    p: &WaveBlockParams<T>,
    grad_y: &Tensor<T>,
    fb: &FilterBank,
) -> Result<(Tensor<T>, WaveBlockGrads<T>)> {
    let g_bn = relu_backward(&cache.bn_out, grad_y);
    let (g_z, g_gamma, g_beta) = batchnorm2d_backward(&cache.conv_out, &p.bn, &cache.bn_cache, &g_bn)?;
    let (g_r, g_conv) = wave_conv_backward(&cache.rearranged, &p.conv, p.conv_mode, &g_z)?;
    let grad_x = match p.wavelet {
        WaveletKind::Dtcwt => {
            // the rearrangement is a permutation, so its adjoint is its inverse
            let (g_low, g_high) = rearrange_inverse(&g_r)?;
            let (h, w) = (cache.input_shape[2], cache.input_shape[3]);
            let sub = Subbands { lowpass: g_low, highpass: vec![g_high], original_hw: (h, w) };
            dtcwt_forward_adjoint(&sub, fb)?
        }
        // orthonormal: adjoint of the analysis is the synthesis
        WaveletKind::Haar => haar_inverse(&g_r)?,
    };
    Ok((grad_x, WaveBlockGrads { conv: g_conv, gamma: g_gamma, beta: g_beta }))
}

/// Decode a rearranged sub-band tensor back to feature space. This is the
/// linear tail of the iWave-Block and the bypass hook used to verify that a
/// Wave-Block's pre-conv representation reproduces its input.
pub fn spectral_decode<T: Scalar>(
    s: &Tensor<T>,
    wavelet: WaveletKind,
    fb: &FilterBank,
) -> Result<Tensor<T>> {
    match wavelet {
        WaveletKind::Dtcwt => {
            let (low, high) = rearrange_inverse(s)?;
            let (_, _, h, w) = low.dims4()?;
            let sub = Subbands { lowpass: low, highpass: vec![high], original_hw: (h, w) };
            dtcwt_inverse(&sub, fb)
        }
        WaveletKind::Haar => haar_inverse(s),
    }
}

fn spectral_decode_adjoint<T: Scalar>(
    grad: &Tensor<T>,
    wavelet: WaveletKind,
    fb: &FilterBank,
) -> Result<Tensor<T>> {
    match wavelet {
        WaveletKind::Dtcwt => {
            let sub = dtcwt_inverse_adjoint(grad, 1, fb)?;
            rearrange_forward(&sub.lowpass, &sub.highpass[0])
        }
        WaveletKind::Haar => haar_forward(grad),
    }
}

#[derive(Debug, Clone)]
pub struct IWaveBlockParams<T> {
    /// 1x1 conv producing the sub-band coefficients (D -> factor * C_out).
    pub synth: ConvParams<T>,
    pub bn_synth: Option<BatchNormState<T>>,
    /// 3x3 conv fusing the restored features with the skip (2*C_out -> C_out).
    pub fuse: ConvParams<T>,
    pub bn_fuse: BatchNormState<T>,
    pub wavelet: WaveletKind,
}

#[derive(Debug)]
pub struct IWaveBlockCache<T> {
    d: Tensor<T>,
    synth_out: Tensor<T>,
    bn_synth: Option<(BnCache<T>, Tensor<T>)>, // (cache, bn output)
    cat: Tensor<T>,
    fuse_out: Tensor<T>,
    bn_fuse_cache: BnCache<T>,
    bn_fuse_out: Tensor<T>,
    c_out: usize,
}

/// Spectral up-sampling with skip fusion:
/// ((N,D,H/2,W/2), (N,C,H,W)) -> (N,C,H,W).
pub fn iwave_block_forward<T: Scalar>(
    d: &Tensor<T>,
    skip: &Tensor<T>,
    p: &mut IWaveBlockParams<T>,
    mode: Mode,
    fb: &FilterBank,
) -> Result<(Tensor<T>, IWaveBlockCache<T>)> {
    let (_, c_skip, hs, ws) = skip.dims4()?;
    let (_, _, hd, wd) = d.dims4()?;
    if (hs, ws) != (2 * hd, 2 * wd) {
        return Err(CoreError::shape(format!(
            "iwave_block: skip ({hs},{ws}) is not double the decoder input ({hd},{wd})"
        )));
    }
    let synth_out = conv2d(d, &p.synth)?;
    let (s, bn_synth) = match &mut p.bn_synth {
        Some(bn) => {
            let (y, c) = batchnorm2d(&synth_out, bn, mode)?;
            (y.clone(), Some((c, y)))
        }
        None => (synth_out.clone(), None),
    };
    let y1 = spectral_decode(&s, p.wavelet, fb)?;
    let (_, c1, _, _) = y1.dims4()?;
    if c1 != c_skip {
        return Err(CoreError::shape(format!(
            "iwave_block: decoded channels {c1} != skip channels {c_skip}"
        )));
    }
    let cat = concat_channels(&y1, skip)?;
    let fuse_out = conv2d(&cat, &p.fuse)?;
    let (bn_fuse_out, bn_fuse_cache) = batchnorm2d(&fuse_out, &mut p.bn_fuse, mode)?;
    let y = relu(&bn_fuse_out);
    Ok((
        y,
        IWaveBlockCache {
            d: d.clone(),
            synth_out,
            bn_synth,
            cat,
            fuse_out,
            bn_fuse_cache,
            bn_fuse_out,
            c_out: c1,
        },
    ))
}

#[derive(Debug)]
pub struct IWaveBlockGrads<T> {
    pub synth: ConvParams<T>,
    pub bn_synth: Option<(Tensor<T>, Tensor<T>)>, // (gamma, beta)
    pub fuse: ConvParams<T>,
    pub fuse_gamma: Tensor<T>,
    pub fuse_beta: Tensor<T>,
}

pub fn iwave_block_backward<T: Scalar>(
    cache: &IWaveBlockCache<T>,
    p: &IWaveBlockParams<T>,
    grad_y: &Tensor<T>,
    fb: &FilterBank,
) -> Result<(Tensor<T>, Tensor<T>, IWaveBlockGrads<T>)> {
    let g_bn = relu_backward(&cache.bn_fuse_out, grad_y);
    let (g_fuse_out, fg, fbeta) =
        batchnorm2d_backward(&cache.fuse_out, &p.bn_fuse, &cache.bn_fuse_cache, &g_bn)?;
    let (g_cat, g_fuse) = conv2d_backward(&cache.cat, &p.fuse, &g_fuse_out)?;
    let c = cache.c_out;
    let g_y1 = slice_channels(&g_cat, 0, c)?;
    let grad_skip = slice_channels(&g_cat, c, 2 * c)?;
    let g_s = spectral_decode_adjoint(&g_y1, p.wavelet, fb)?;
    let (g_synth_out, g_bn_synth) = match (&p.bn_synth, &cache.bn_synth) {
        (Some(bn), Some((bcache, _))) => {
            let (gx, gg, gb) = batchnorm2d_backward(&cache.synth_out, bn, bcache, &g_s)?;
            (gx, Some((gg, gb)))
        }
        _ => (g_s, None),
    };
    let (grad_d, g_synth) = conv2d_backward(&cache.d, &p.synth, &g_synth_out)?;
    Ok((
        grad_d,
        grad_skip,
        IWaveBlockGrads {
            synth: g_synth,
            bn_synth: g_bn_synth,
            fuse: g_fuse,
            fuse_gamma: fg,
            fuse_beta: fbeta,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct ConvBlockParams<T> {
    pub conv: ConvParams<T>, // C -> 2C, 3x3
    pub bn: BatchNormState<T>,
}

#[derive(Debug)]
pub struct ConvBlockCache<T> {
    input: Tensor<T>,
    conv_out: Tensor<T>,
    bn_cache: BnCache<T>,
    bn_out: Tensor<T>,
    relu_out_shape: Vec<usize>,
    pool_arg: Vec<usize>,
}

/// Max-pool baseline encoder block: (N,C,H,W) -> (N,2C,H/2,W/2).
pub fn conv_block_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut ConvBlockParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, ConvBlockCache<T>)> {
    let z = conv2d(x, &p.conv)?;
    let (bn_out, bn_cache) = batchnorm2d(&z, &mut p.bn, mode)?;
    let a = relu(&bn_out);
    let (y, pool_arg) = maxpool2(&a)?;
    Ok((
        y,
        ConvBlockCache {
            input: x.clone(),
            conv_out: z,
            bn_cache,
            bn_out,
            relu_out_shape: a.shape().to_vec(),
            pool_arg,
        },
    ))
}

pub fn conv_block_backward<T: Scalar>(
    cache: &ConvBlockCache<T>,
    p: &ConvBlockParams<T>,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, WaveBlockGrads<T>)> {
    let g_a = maxpool2_backward(&cache.relu_out_shape, &cache.pool_arg, grad_y);
    let g_bn = relu_backward(&cache.bn_out, &g_a);
    let (g_z, g_gamma, g_beta) = batchnorm2d_backward(&cache.conv_out, &p.bn, &cache.bn_cache, &g_bn)?;
    let (grad_x, g_conv) = conv2d_backward(&cache.input, &p.conv, &g_z)?;
    Ok((grad_x, WaveBlockGrads { conv: g_conv, gamma: g_gamma, beta: g_beta }))
}

#[derive(Debug, Clone)]
pub struct LinearUpParams<T> {
    /// 1x1 conv reducing the up-sampled decoder features (D -> C_out).
    pub proj: ConvParams<T>,
    pub bn_proj: Option<BatchNormState<T>>,
    pub fuse: ConvParams<T>, // 2*C_out -> C_out, 3x3
    pub bn_fuse: BatchNormState<T>,
}

#[derive(Debug)]
pub struct LinearUpCache<T> {
    d_shape: Vec<usize>,
    up: Tensor<T>,
    proj_out: Tensor<T>,
    bn_proj: Option<(BnCache<T>, Tensor<T>)>,
    cat: Tensor<T>,
    fuse_out: Tensor<T>,
    bn_fuse_cache: BnCache<T>,
    bn_fuse_out: Tensor<T>,
    c_out: usize,
}

/// Bilinear-interpolation baseline decoder block.
pub fn linear_up_forward<T: Scalar>(
    d: &Tensor<T>,
    skip: &Tensor<T>,
    p: &mut LinearUpParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, LinearUpCache<T>)> {
    let up = bilinear_upsample2(d)?;
    let proj_out = conv2d(&up, &p.proj)?;
    let (y1, bn_proj) = match &mut p.bn_proj {
        Some(bn) => {
            let (y, c) = batchnorm2d(&proj_out, bn, mode)?;
            (y.clone(), Some((c, y)))
        }
        None => (proj_out.clone(), None),
    };
    let (_, c1, _, _) = y1.dims4()?;
    let cat = concat_channels(&y1, skip)?;
    let fuse_out = conv2d(&cat, &p.fuse)?;
    let (bn_fuse_out, bn_fuse_cache) = batchnorm2d(&fuse_out, &mut p.bn_fuse, mode)?;
    let y = relu(&bn_fuse_out);
    Ok((
        y,
        LinearUpCache {
            d_shape: d.shape().to_vec(),
            up,
            proj_out,
            bn_proj,
            cat,
            fuse_out,
            bn_fuse_cache,
            bn_fuse_out,
            c_out: c1,
        },
    ))
}

pub fn linear_up_backward<T: Scalar>(
    cache: &LinearUpCache<T>,
    p: &LinearUpParams<T>,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, IWaveBlockGrads<T>)> {
    let g_bn = relu_backward(&cache.bn_fuse_out, grad_y);
    let (g_fuse_out, fg, fbeta) =
        batchnorm2d_backward(&cache.fuse_out, &p.bn_fuse, &cache.bn_fuse_cache, &g_bn)?;
    let (g_cat, g_fuse) = conv2d_backward(&cache.cat, &p.fuse, &g_fuse_out)?;
    let c = cache.c_out;
    let g_y1 = slice_channels(&g_cat, 0, c)?;
    let grad_skip = slice_channels(&g_cat, c, 2 * c)?;
    let (g_proj_out, g_bn_proj) = match (&p.bn_proj, &cache.bn_proj) {
        (Some(bn), Some((bcache, _))) => {
            let (gx, gg, gb) = batchnorm2d_backward(&cache.proj_out, bn, bcache, &g_y1)?;
            (gx, Some((gg, gb)))
        }
        _ => (g_y1, None),
    };
    let (g_up, g_proj) = conv2d_backward(&cache.up, &p.proj, &g_proj_out)?;
    let grad_d = bilinear_upsample2_backward(&cache.d_shape, &g_up)?;
    Ok((
        grad_d,
        grad_skip,
        IWaveBlockGrads {
            synth: g_proj,
            bn_synth: g_bn_proj,
            fuse: g_fuse,
            fuse_gamma: fg,
            fuse_beta: fbeta,
        },
    ))
}
