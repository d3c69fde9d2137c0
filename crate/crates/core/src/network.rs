//! The encoder-decoder segmentation network assembled from blocks, with a
//! hand-written end-to-end backward pass, parameter/MAC accounting, and
//! checkpoint (de)serialization.

use crate::blocks::{
    conv_block_backward, conv_block_forward, iwave_block_backward, iwave_block_forward,
    linear_up_backward, linear_up_forward, wave_block_backward, wave_block_forward,
    ConvBlockCache, ConvBlockParams, IWaveBlockCache, IWaveBlockGrads, IWaveBlockParams,
    LinearUpCache, LinearUpParams, WaveBlockCache, WaveBlockGrads, WaveBlockParams, WaveConv,
};
use crate::error::{CoreError, Result};
use crate::io;
use crate::tensor::ops::{batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, relu, relu_backward, BnCache};
use crate::tensor::{BatchNormState, ConvParams, Mode, Scalar, Tensor};
use crate::wavelet::{FilterBank, WaveletKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownKind {
    WaveBlock,
    ConvBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpKind {
    IwaveBlock,
    LinearUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub down_kind: DownKind,
    pub up_kind: UpKind,
    pub wavelet: WaveletKind,
    #[serde(default)]
    pub wave_conv: WaveConv,
    pub bn_momentum: f64,
    /// Batch norm after the decoder's synthesis conv (stability aid).
    #[serde(default = "default_true")]
    pub synth_bn: bool,
    /// Shared conv+BN+ReLU block at the bottom of the U (standard practice;
    /// identical across all down/up variants).
    #[serde(default = "default_true")]
    pub bottleneck: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(CoreError::InvalidArgument("depth must be >= 1".into()));
        }
        if self.base_channels < 1 || self.in_channels < 1 || self.num_classes < 2 {
            return Err(CoreError::InvalidArgument("degenerate channel config".into()));
        }
        Ok(())
    }

    /// Channels entering encoder stage `i` (0-based).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }
}

#[derive(Debug, Clone)]
pub enum DownParams<T> {
    Wave(WaveBlockParams<T>),
    Conv(ConvBlockParams<T>),
}

#[derive(Debug, Clone)]
pub enum UpParams<T> {
    Iwave(IWaveBlockParams<T>),
    Linear(LinearUpParams<T>),
}

#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub cfg: NetworkConfig,
    pub stem: ConvParams<T>,
    pub stem_bn: BatchNormState<T>,
    pub encoder: Vec<DownParams<T>>,
    pub bottleneck: Option<(ConvParams<T>, BatchNormState<T>)>,
    pub decoder: Vec<UpParams<T>>,
    pub head: ConvParams<T>,
}

fn he_conv<T: Scalar>(c_out: usize, c_in: usize, k: usize, rng: &mut ChaCha8Rng) -> ConvParams<T> {
    let std = (2.0 / (c_in * k * k) as f64).sqrt();
    let w = Tensor::from_fn(&[c_out, c_in, k, k], |_| {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        T::from_f64(std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos())
    });
    ConvParams::new(w, Tensor::zeros(&[c_out])).unwrap()
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bn = |c: usize| BatchNormState::new(c, cfg.bn_momentum);
        let c0 = cfg.base_channels;
        let stem = he_conv(c0, cfg.in_channels, 3, &mut rng);
        let stem_bn = bn(c0);
        let mut encoder = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let c = cfg.stage_channels(i);
            encoder.push(match cfg.down_kind {
                DownKind::WaveBlock => {
                    let cin = WaveBlockParams::<T>::conv_in_channels(c, cfg.wavelet, cfg.wave_conv);
                    let mut conv = he_conv(2 * c, cin, 3, &mut rng);
                    if cfg.wave_conv == WaveConv::GroupedShared {
                        // the tied conv sums one output per group, so the
                        // effective fan-in is groups x (2C x k x k)
                        let groups = cfg.wavelet.spectral_channel_factor() / 2;
                        let s = T::from_f64(1.0 / (groups as f64).sqrt());
                        conv.weights = conv.weights.map(|v| v * s);
                    }
                    DownParams::Wave(WaveBlockParams {
                        conv,
                        bn: bn(2 * c),
                        wavelet: cfg.wavelet,
                        conv_mode: cfg.wave_conv,
                    })
                }
                DownKind::ConvBlock => DownParams::Conv(ConvBlockParams {
                    conv: he_conv(2 * c, c, 3, &mut rng),
                    bn: bn(2 * c),
                }),
            });
        }
        let cl = cfg.stage_channels(cfg.depth);
        let bottleneck = cfg
            .bottleneck
            .then(|| (he_conv(cl, cl, 3, &mut rng), bn(cl)));
        let mut decoder = Vec::with_capacity(cfg.depth);
        for i in (0..cfg.depth).rev() {
            // deepest stage first: input 2*C_i channels, output C_i
            let c = cfg.stage_channels(i);
            let d_in = 2 * c;
            decoder.push(match cfg.up_kind {
                UpKind::IwaveBlock => {
                    let factor = cfg.wavelet.spectral_channel_factor();
                    UpParams::Iwave(IWaveBlockParams {
                        synth: he_conv(factor * c, d_in, 1, &mut rng),
                        bn_synth: cfg.synth_bn.then(|| bn(factor * c)),
                        fuse: he_conv(c, 2 * c, 3, &mut rng),
                        bn_fuse: bn(c),
                        wavelet: cfg.wavelet,
                    })
                }
                UpKind::LinearUp => UpParams::Linear(LinearUpParams {
                    proj: he_conv(c, d_in, 1, &mut rng),
                    bn_proj: cfg.synth_bn.then(|| bn(c)),
                    fuse: he_conv(c, 2 * c, 3, &mut rng),
                    bn_fuse: bn(c),
                }),
            });
        }
        let head = he_conv(cfg.num_classes, c0, 1, &mut rng);
        Ok(ModelParams { cfg: cfg.clone(), stem, stem_bn, encoder, bottleneck, decoder, head })
    }

    /// Every tensor in the model: (name, tensor, trainable). Running BN
    /// statistics are listed (they belong in checkpoints) but not trainable.
    /// The trainable subset, in this exact order, is the optimizer's view.
    pub fn named(&self) -> Vec<(String, &Tensor<T>, bool)> {
        let mut v: Vec<(String, &Tensor<T>, bool)> = Vec::new();
        push_conv(&mut v, "stem", &self.stem);
        push_bn(&mut v, "stem_bn", &self.stem_bn);
        for (i, st) in self.encoder.iter().enumerate() {
            let (conv, bn) = match st {
                DownParams::Wave(p) => (&p.conv, &p.bn),
                DownParams::Conv(p) => (&p.conv, &p.bn),
            };
            push_conv(&mut v, &format!("enc{i}.conv"), conv);
            push_bn(&mut v, &format!("enc{i}.bn"), bn);
        }
        if let Some((conv, bn)) = &self.bottleneck {
            push_conv(&mut v, "bottleneck", conv);
            push_bn(&mut v, "bottleneck_bn", bn);
        }
        for (i, st) in self.decoder.iter().enumerate() {
            let (synth, bn_synth, fuse, bn_fuse) = match st {
                UpParams::Iwave(p) => (&p.synth, p.bn_synth.as_ref(), &p.fuse, &p.bn_fuse),
                UpParams::Linear(p) => (&p.proj, p.bn_proj.as_ref(), &p.fuse, &p.bn_fuse),
            };
            push_conv(&mut v, &format!("dec{i}.synth"), synth);
            if let Some(bn) = bn_synth {
                push_bn(&mut v, &format!("dec{i}.bn_synth"), bn);
            }
            push_conv(&mut v, &format!("dec{i}.fuse"), fuse);
            push_bn(&mut v, &format!("dec{i}.bn_fuse"), bn_fuse);
        }
        push_conv(&mut v, "head", &self.head);
        v
    }

    /// Mutable counterpart of [`named`](Self::named); identical order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>, bool)> {
        let mut v: Vec<(String, &mut Tensor<T>, bool)> = Vec::new();
        push_conv_mut(&mut v, "stem", &mut self.stem);
        push_bn_mut(&mut v, "stem_bn", &mut self.stem_bn);
        for (i, st) in self.encoder.iter_mut().enumerate() {
            let (conv, bn) = match st {
                DownParams::Wave(p) => (&mut p.conv, &mut p.bn),
                DownParams::Conv(p) => (&mut p.conv, &mut p.bn),
            };
            push_conv_mut(&mut v, &format!("enc{i}.conv"), conv);
            push_bn_mut(&mut v, &format!("enc{i}.bn"), bn);
        }
        if let Some((conv, bn)) = &mut self.bottleneck {
            push_conv_mut(&mut v, "bottleneck", conv);
            push_bn_mut(&mut v, "bottleneck_bn", bn);
        }
        for (i, st) in self.decoder.iter_mut().enumerate() {
            let (synth, bn_synth, fuse, bn_fuse) = match st {
                UpParams::Iwave(p) => (&mut p.synth, p.bn_synth.as_mut(), &mut p.fuse, &mut p.bn_fuse),
                UpParams::Linear(p) => (&mut p.proj, p.bn_proj.as_mut(), &mut p.fuse, &mut p.bn_fuse),
            };
            push_conv_mut(&mut v, &format!("dec{i}.synth"), synth);
            if let Some(bn) = bn_synth {
                push_bn_mut(&mut v, &format!("dec{i}.bn_synth"), bn);
            }
            push_conv_mut(&mut v, &format!("dec{i}.fuse"), fuse);
            push_bn_mut(&mut v, &format!("dec{i}.bn_fuse"), bn_fuse);
        }
        push_conv_mut(&mut v, "head", &mut self.head);
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t, _)| t.numel()).sum()
    }
}

fn push_conv<'a, T>(v: &mut Vec<(String, &'a Tensor<T>, bool)>, name: &str, c: &'a ConvParams<T>) {
    v.push((format!("{name}.w"), &c.weights, true));
    v.push((format!("{name}.b"), &c.bias, true));
}

fn push_bn<'a, T>(v: &mut Vec<(String, &'a Tensor<T>, bool)>, name: &str, s: &'a BatchNormState<T>) {
    v.push((format!("{name}.g"), &s.gamma, true));
    v.push((format!("{name}.b"), &s.beta, true));
    v.push((format!("{name}.rm"), &s.running_mean, false));
    v.push((format!("{name}.rv"), &s.running_var, false));
}

fn push_conv_mut<'a, T>(
    v: &mut Vec<(String, &'a mut Tensor<T>, bool)>,
    name: &str,
    c: &'a mut ConvParams<T>,
) {
    v.push((format!("{name}.w"), &mut c.weights, true));
    v.push((format!("{name}.b"), &mut c.bias, true));
}

fn push_bn_mut<'a, T>(
    v: &mut Vec<(String, &'a mut Tensor<T>, bool)>,
    name: &str,
    s: &'a mut BatchNormState<T>,
) {
    v.push((format!("{name}.g"), &mut s.gamma, true));
    v.push((format!("{name}.b"), &mut s.beta, true));
    v.push((format!("{name}.rm"), &mut s.running_mean, false));
    v.push((format!("{name}.rv"), &mut s.running_var, false));
}

pub enum DownCache<T> {
    Wave(WaveBlockCache<T>),
    Conv(ConvBlockCache<T>),
}

pub enum UpCache<T> {
    Iwave(IWaveBlockCache<T>),
    Linear(LinearUpCache<T>),
}

pub struct NetCache<T> {
    input: Tensor<T>,
    stem_conv: Tensor<T>,
    stem_bn: BnCache<T>,
    stem_bn_out: Tensor<T>,
    enc: Vec<DownCache<T>>,
    bottleneck: Option<(Tensor<T>, Tensor<T>, BnCache<T>, Tensor<T>)>, // (in, conv, bn cache, bn out)
    dec: Vec<UpCache<T>>,
    head_in: Tensor<T>,
}

pub fn forward<T: Scalar>(
    x: &Tensor<T>,
    p: &mut ModelParams<T>,
    mode: Mode,
    fb: &FilterBank,
) -> Result<(Tensor<T>, NetCache<T>)> {
    let (_, cin, h, w) = x.dims4()?;
    let depth = p.cfg.depth;
    if cin != p.cfg.in_channels {
        return Err(CoreError::shape(format!(
            "input has {cin} channels, config says {}",
            p.cfg.in_channels
        )));
    }
    if h % (1 << depth) != 0 || w % (1 << depth) != 0 {
        return Err(CoreError::shape(format!(
            "spatial dims {h}x{w} not divisible by 2^{depth}"
        )));
    }
    let stem_conv = conv2d(x, &p.stem)?;
    let (stem_bn_out, stem_bn) = batchnorm2d(&stem_conv, &mut p.stem_bn, mode)?;
    let mut cur = relu(&stem_bn_out);

    let mut skips = Vec::with_capacity(depth);
    let mut enc = Vec::with_capacity(depth);
    for stage in p.encoder.iter_mut() {
        skips.push(cur.clone());
        let (y, cache) = match stage {
            DownParams::Wave(wp) => {
                let (y, c) = wave_block_forward(&cur, wp, mode, fb)?;
                (y, DownCache::Wave(c))
            }
            DownParams::Conv(cp) => {
                let (y, c) = conv_block_forward(&cur, cp, mode)?;
                (y, DownCache::Conv(c))
            }
        };
        cur = y;
        enc.push(cache);
    }

    let bottleneck = match &mut p.bottleneck {
        Some((conv, bn)) => {
            let b_in = cur;
            let b_conv = conv2d(&b_in, conv)?;
            let (b_bn_out, b_bn) = batchnorm2d(&b_conv, bn, mode)?;
            cur = relu(&b_bn_out);
            Some((b_in, b_conv, b_bn, b_bn_out))
        }
        None => None,
    };

    let mut dec = Vec::with_capacity(depth);
    for (j, stage) in p.decoder.iter_mut().enumerate() {
        let skip = &skips[depth - 1 - j];
        let (y, cache) = match stage {
            UpParams::Iwave(up) => {
                let (y, c) = iwave_block_forward(&cur, skip, up, mode, fb)?;
                (y, UpCache::Iwave(c))
            }
            UpParams::Linear(lp) => {
                let (y, c) = linear_up_forward(&cur, skip, lp, mode)?;
                (y, UpCache::Linear(c))
            }
        };
        cur = y;
        dec.push(cache);
    }

    let logits = conv2d(&cur, &p.head)?;
    let cache = NetCache {
        input: x.clone(),
        stem_conv,
        stem_bn,
        stem_bn_out,
        enc,
        bottleneck,
        dec,
        head_in: cur,
    };
    Ok((logits, cache))
}

pub struct ModelGrads<T> {
    pub stem: ConvParams<T>,
    pub stem_bn: (Tensor<T>, Tensor<T>),
    pub encoder: Vec<WaveBlockGrads<T>>,
    pub bottleneck: Option<(ConvParams<T>, Tensor<T>, Tensor<T>)>,
    pub decoder: Vec<IWaveBlockGrads<T>>,
    pub head: ConvParams<T>,
}

impl<T: Scalar> ModelGrads<T> {
    /// Flat view in the same order as the trainable subset of
    /// [`ModelParams::named`].
    pub fn flat(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = Vec::new();
        v.extend([&self.stem.weights, &self.stem.bias, &self.stem_bn.0, &self.stem_bn.1]);
        for g in &self.encoder {
            v.extend([&g.conv.weights, &g.conv.bias, &g.gamma, &g.beta]);
        }
        if let Some((conv, gamma, beta)) = &self.bottleneck {
            v.extend([&conv.weights, &conv.bias, gamma, beta]);
        }
        for g in &self.decoder {
            v.extend([&g.synth.weights, &g.synth.bias]);
            if let Some((gg, gb)) = &g.bn_synth {
                v.extend([gg, gb]);
            }
            v.extend([&g.fuse.weights, &g.fuse.bias, &g.fuse_gamma, &g.fuse_beta]);
        }
        v.extend([&self.head.weights, &self.head.bias]);
        v
    }

    pub fn all_finite(&self) -> bool {
        self.flat().iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

pub fn backward<T: Scalar>(
    cache: &NetCache<T>,
    p: &ModelParams<T>,
    grad_logits: &Tensor<T>,
    fb: &FilterBank,
) -> Result<ModelGrads<T>> {
    let depth = p.cfg.depth;
    let (mut g_cur, g_head) = conv2d_backward(&cache.head_in, &p.head, grad_logits)?;

    let mut skip_grads: Vec<Option<Tensor<T>>> = (0..depth).map(|_| None).collect();
    let mut dec_grads: Vec<Option<IWaveBlockGrads<T>>> = (0..depth).map(|_| None).collect();
    for j in (0..depth).rev() {
        let (g_d, g_skip, grads) = match (&cache.dec[j], &p.decoder[j]) {
            (UpCache::Iwave(c), UpParams::Iwave(up)) => iwave_block_backward(c, up, &g_cur, fb)?,
            (UpCache::Linear(c), UpParams::Linear(lp)) => linear_up_backward(c, lp, &g_cur)?,
            _ => return Err(CoreError::shape("decoder cache/params kind mismatch")),
        };
        skip_grads[depth - 1 - j] = Some(g_skip);
        dec_grads[j] = Some(grads);
        g_cur = g_d;
    }

    let bottleneck = match (&cache.bottleneck, &p.bottleneck) {
        (Some((b_in, b_conv, b_bn, b_bn_out)), Some((conv, bn))) => {
            let g_bn = relu_backward(b_bn_out, &g_cur);
            let (g_z, g_gamma, g_beta) = batchnorm2d_backward(b_conv, bn, b_bn, &g_bn)?;
            let (g_x, g_conv) = conv2d_backward(b_in, conv, &g_z)?;
            g_cur = g_x;
            Some((g_conv, g_gamma, g_beta))
        }
        (None, None) => None,
        _ => return Err(CoreError::shape("bottleneck cache/params mismatch")),
    };

    let mut enc_grads: Vec<Option<WaveBlockGrads<T>>> = (0..depth).map(|_| None).collect();
    for i in (0..depth).rev() {
        let (g_x, grads) = match (&cache.enc[i], &p.encoder[i]) {
            (DownCache::Wave(c), DownParams::Wave(wp)) => wave_block_backward(c, wp, &g_cur, fb)?,
            (DownCache::Conv(c), DownParams::Conv(cp)) => conv_block_backward(c, cp, &g_cur)?,
            _ => return Err(CoreError::shape("encoder cache/params kind mismatch")),
        };
        enc_grads[i] = Some(grads);
        g_cur = g_x.add(skip_grads[i].as_ref().unwrap())?;
    }

    let g_relu = relu_backward(&cache.stem_bn_out, &g_cur);
    let (g_z, g_gamma, g_beta) = batchnorm2d_backward(&cache.stem_conv, &p.stem_bn, &cache.stem_bn, &g_relu)?;
    let (_, g_stem) = conv2d_backward(&cache.input, &p.stem, &g_z)?;

    Ok(ModelGrads {
        stem: g_stem,
        stem_bn: (g_gamma, g_beta),
        encoder: enc_grads.into_iter().map(Option::unwrap).collect(),
        bottleneck,
        decoder: dec_grads.into_iter().map(Option::unwrap).collect(),
        head: g_head,
    })
}

pub fn save_model<T: Scalar>(path: &Path, p: &ModelParams<T>) -> Result<()> {
    let named = p.named();
    let list: Vec<(String, &Tensor<T>)> =
        named.iter().map(|(n, t, _)| (n.clone(), *t)).collect();
    io::save_checkpoint(path, &list, serde_json::to_value(&p.cfg)?)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let (tensors, meta) = io::load_checkpoint::<T>(path)?;
    let cfg: NetworkConfig = serde_json::from_value(meta)?;
    let mut p = ModelParams::init(&cfg)?;
    let mut by_name: std::collections::HashMap<String, Tensor<T>> = tensors.into_iter().collect();
    for (name, dst, _) in p.named_mut() {
        let src = by_name.remove(&name).ok_or_else(|| {
            CoreError::Format(format!("checkpoint is missing tensor {name}"))
        })?;
        if src.shape() != dst.shape() {
            return Err(CoreError::shape(format!(
                "checkpoint tensor {name}: shape {:?} != expected {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(CoreError::Format(format!("unexpected tensor {extra} in checkpoint")));
    }
    Ok(p)
}

/// Parameter and multiply-accumulate cost of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub params: usize,
    pub macs: u64,
}

pub fn conv_macs(c_in: usize, c_out: usize, k: usize, h: usize, w: usize) -> u64 {
    (k * k * c_in * c_out * h * w) as u64
}

pub fn conv_params(c_in: usize, c_out: usize, k: usize) -> usize {
    k * k * c_in * c_out + c_out
}

fn bn_params(c: usize) -> usize {
    4 * c // gamma, beta, running mean, running var
}

/// Forward transform cost: filter taps x output elements (the redundant
/// dual-tree output is 4x the input; Haar is critically sampled).
fn transform_macs(wavelet: WaveletKind, c: usize, h: usize, w: usize, fb: &FilterBank) -> u64 {
    let elems = (c * h * w) as u64;
    match wavelet {
        WaveletKind::Dtcwt => {
            let taps =
                (fb.level1_tree_a.analysis_low.len() + fb.level1_tree_a.analysis_high.len()) as u64;
            taps * 4 * elems
        }
        WaveletKind::Haar => 4 * elems,
    }
}

pub fn count_params_flops(cfg: &NetworkConfig, input_hw: (usize, usize)) -> Result<CostReport> {
    cfg.validate()?;
    let fb = FilterBank::default();
    let (h0, w0) = input_hw;
    if h0 % (1 << cfg.depth) != 0 || w0 % (1 << cfg.depth) != 0 {
        return Err(CoreError::shape(format!(
            "input {h0}x{w0} not divisible by 2^{}",
            cfg.depth
        )));
    }
    let c0 = cfg.base_channels;
    let mut params = 0usize;
    let mut macs = 0u64;
    let per_elem = |c: usize, h: usize, w: usize, n: u64| n * (c * h * w) as u64;

    // stem
    params += conv_params(cfg.in_channels, c0, 3) + bn_params(c0);
    macs += conv_macs(cfg.in_channels, c0, 3, h0, w0);
    macs += per_elem(c0, h0, w0, 2); // BN + ReLU

    for i in 0..cfg.depth {
        let c = cfg.stage_channels(i);
        let (h, w) = (h0 >> i, w0 >> i);
        match cfg.down_kind {
            DownKind::WaveBlock => {
                let cin = WaveBlockParams::<f32>::conv_in_channels(c, cfg.wavelet, cfg.wave_conv);
                params += conv_params(cin, 2 * c, 3) + bn_params(2 * c);
                macs += transform_macs(cfg.wavelet, c, h, w, &fb);
                // grouped mode ties weights but still convolves every group
                macs += conv_macs(cfg.wavelet.spectral_channel_factor() * c, 2 * c, 3, h / 2, w / 2);
                macs += per_elem(2 * c, h / 2, w / 2, 2);
            }
            DownKind::ConvBlock => {
                params += conv_params(c, 2 * c, 3) + bn_params(2 * c);
                macs += conv_macs(c, 2 * c, 3, h, w);
                macs += per_elem(2 * c, h, w, 2);
                macs += per_elem(2 * c, h / 2, w / 2, 1); // max-pool
            }
        }
    }

    let cl = cfg.stage_channels(cfg.depth);
    let (hl, wl) = (h0 >> cfg.depth, w0 >> cfg.depth);
    if cfg.bottleneck {
        params += conv_params(cl, cl, 3) + bn_params(cl);
        macs += conv_macs(cl, cl, 3, hl, wl);
        macs += per_elem(cl, hl, wl, 2);
    }

    for i in (0..cfg.depth).rev() {
        // decoder stage producing c channels at (h, w)
        let c = cfg.stage_channels(i);
        let (h, w) = (h0 >> i, w0 >> i);
        match cfg.up_kind {
            UpKind::IwaveBlock => {
                let factor = cfg.wavelet.spectral_channel_factor();
                params += conv_params(2 * c, factor * c, 1);
                if cfg.synth_bn {
                    params += bn_params(factor * c);
                }
                macs += conv_macs(2 * c, factor * c, 1, h / 2, w / 2);
                if cfg.synth_bn {
                    macs += per_elem(factor * c, h / 2, w / 2, 1);
                }
                macs += transform_macs(cfg.wavelet, c, h, w, &fb); // inverse
            }
            UpKind::LinearUp => {
                params += conv_params(2 * c, c, 1);
                if cfg.synth_bn {
                    params += bn_params(c);
                }
                macs += per_elem(2 * c, h, w, 3); // bilinear x2
                macs += conv_macs(2 * c, c, 1, h, w);
                if cfg.synth_bn {
                    macs += per_elem(c, h, w, 1);
                }
            }
        }
        params += conv_params(2 * c, c, 3) + bn_params(c);
        macs += conv_macs(2 * c, c, 3, h, w);
        macs += per_elem(c, h, w, 2);
    }

    params += conv_params(c0, cfg.num_classes, 1);
    macs += conv_macs(c0, cfg.num_classes, 1, h0, w0);

    Ok(CostReport { params, macs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mode;
    use rand::Rng;

    fn cfg(down: DownKind, up: UpKind, wavelet: WaveletKind, conv: WaveConv) -> NetworkConfig {
        NetworkConfig {
            in_channels: 1,
            num_classes: 2,
            base_channels: 4,
            depth: 2,
            down_kind: down,
            up_kind: up,
            wavelet,
            wave_conv: conv,
            bn_momentum: 0.1,
            synth_bn: true,
            bottleneck: true,
            seed: 7,
        }
    }

    fn all_variants() -> Vec<NetworkConfig> {
        let mut v = Vec::new();
        for wavelet in [WaveletKind::Haar, WaveletKind::Dtcwt] {
            for down in [DownKind::ConvBlock, DownKind::WaveBlock] {
                for up in [UpKind::LinearUp, UpKind::IwaveBlock] {
                    v.push(cfg(down, up, wavelet, WaveConv::Full));
                }
            }
        }
        v
    }

    #[test]
    fn shape_contract_all_variants() {
        let fb = FilterBank::default();
        let x = Tensor::<f64>::from_fn(&[1, 1, 16, 16], |i| ((i * 37) % 11) as f64 / 11.0 - 0.4);
        for c in all_variants() {
            let mut p = ModelParams::<f64>::init(&c).unwrap();
            let (logits, _) = forward(&x, &mut p, Mode::Train, &fb).unwrap();
            assert_eq!(logits.shape(), [1, 2, 16, 16], "{c:?}");
        }
    }

    #[test]
    fn deeper_shape_contract() {
        let fb = FilterBank::default();
        let mut c = cfg(DownKind::WaveBlock, UpKind::IwaveBlock, WaveletKind::Dtcwt, WaveConv::Full);
        c.base_channels = 8;
        c.depth = 3;
        let mut p = ModelParams::<f32>::init(&c).unwrap();
        let x = Tensor::<f32>::from_fn(&[1, 1, 32, 32], |i| (i % 7) as f32 * 0.1);
        let (logits, _) = forward(&x, &mut p, Mode::Eval, &fb).unwrap();
        assert_eq!(logits.shape(), [1, 2, 32, 32]);
        // indivisible input must be rejected
        let bad = Tensor::<f32>::zeros(&[1, 1, 20, 32]);
        assert!(forward(&bad, &mut p, Mode::Eval, &fb).is_err());
    }

    #[test]
    fn zero_input_gives_head_bias() {
        let fb = FilterBank::default();
        let c = cfg(DownKind::WaveBlock, UpKind::IwaveBlock, WaveletKind::Dtcwt, WaveConv::Full);
        let mut p = ModelParams::<f64>::init(&c).unwrap();
        for (name, t, _) in p.named_mut() {
            if name.ends_with(".b") && !name.contains("bn") {
                *t = Tensor::zeros(t.shape()); // conv biases
            }
        }
        p.head.bias = Tensor::from_vec(&[2], vec![0.25, -0.5]).unwrap();
        let x = Tensor::<f64>::zeros(&[1, 1, 16, 16]);
        let (logits, _) = forward(&x, &mut p, Mode::Train, &fb).unwrap();
        for k in 0..2 {
            let want = [0.25, -0.5][k];
            for i in 0..256 {
                assert!((logits.data()[k * 256 + i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_cotangent_zero_grads_and_determinism() {
        let fb = FilterBank::default();
        let c = cfg(DownKind::WaveBlock, UpKind::IwaveBlock, WaveletKind::Dtcwt, WaveConv::Full);
        let mut p = ModelParams::<f64>::init(&c).unwrap();
        let x = Tensor::<f64>::from_fn(&[2, 1, 16, 16], |i| ((i * 13) % 17) as f64 / 17.0);
        let (logits, cache) = forward(&x, &mut p, Mode::Train, &fb).unwrap();
        let zeros = Tensor::<f64>::zeros(logits.shape());
        let g = backward(&cache, &p, &zeros, &fb).unwrap();
        for t in g.flat() {
            assert_eq!(t.max_abs(), 0.0);
        }
        let r = Tensor::<f64>::from_fn(logits.shape(), |i| ((i * 7) % 5) as f64 - 2.0);
        let g1 = backward(&cache, &p, &r, &fb).unwrap();
        let g2 = backward(&cache, &p, &r, &fb).unwrap();
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert_eq!(a.data(), b.data());
        }
    }

    /// End-to-end gradient check on a tiny net: loss = <r, logits>.
    #[test]
    fn end_to_end_finite_difference() {
        let fb = FilterBank::default();
        for (down, up, wavelet) in [
            (DownKind::WaveBlock, UpKind::IwaveBlock, WaveletKind::Dtcwt),
            (DownKind::ConvBlock, UpKind::LinearUp, WaveletKind::Haar),
        ] {
            let mut c = cfg(down, up, wavelet, WaveConv::Full);
            c.base_channels = 2;
            c.depth = 1;
            let mut p = ModelParams::<f64>::init(&c).unwrap();
            let x = Tensor::<f64>::from_fn(&[1, 1, 8, 8], |i| ((i * 29) % 23) as f64 / 23.0 - 0.5);
            let (logits, cache) = forward(&x, &mut p, Mode::Train, &fb).unwrap();
            let r = Tensor::<f64>::from_fn(logits.shape(), |i| ((i * 11) % 9) as f64 / 9.0 - 0.4);
            let grads = backward(&cache, &p, &r, &fb).unwrap();
            let flat = grads.flat();
            let analytic: Vec<Vec<f64>> = flat.iter().map(|t| t.data().to_vec()).collect();

            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
            let eps = 1e-5;
            let n_trainable = analytic.len();
            for ti in 0..n_trainable {
                let numel = analytic[ti].len();
                // spot-check a handful of entries per tensor
                let picks: Vec<usize> =
                    (0..numel.min(4)).map(|_| rng.gen_range(0..numel)).collect();
                for &ei in &picks {
                    let loss_at = |p: &mut ModelParams<f64>| -> f64 {
                        let (l, _) = forward(&x, p, Mode::Train, &fb).unwrap();
                        l.data().iter().zip(r.data()).map(|(&a, &b)| a * b).sum()
                    };
                    let orig = {
                        let mut view: Vec<_> = p
                            .named_mut()
                            .into_iter()
                            .filter(|(_, _, tr)| *tr)
                            .collect();
                        let v = view[ti].1.data()[ei];
                        view[ti].1.data_mut()[ei] = v + eps;
                        v
                    };
                    let lp = loss_at(&mut p);
                    {
                        let mut view: Vec<_> = p
                            .named_mut()
                            .into_iter()
                            .filter(|(_, _, tr)| *tr)
                            .collect();
                        view[ti].1.data_mut()[ei] = orig - eps;
                    }
                    let lm = loss_at(&mut p);
                    {
                        let mut view: Vec<_> = p
                            .named_mut()
                            .into_iter()
                            .filter(|(_, _, tr)| *tr)
                            .collect();
                        view[ti].1.data_mut()[ei] = orig;
                    }
                    let fd = (lp - lm) / (2.0 * eps);
                    let an = analytic[ti][ei];
                    if fd.abs().max(an.abs()) < 1e-7 {
                        continue; // true zero (e.g. conv bias swallowed by BN)
                    }
                    let denom = fd.abs().max(an.abs()).max(1e-6);
                    assert!(
                        (fd - an).abs() / denom < 1e-4,
                        "tensor {ti} entry {ei}: fd {fd} vs analytic {an} ({down:?},{up:?})"
                    );
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_param_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.stnc");
        let c = cfg(DownKind::WaveBlock, UpKind::IwaveBlock, WaveletKind::Dtcwt, WaveConv::GroupedShared);
        let p = ModelParams::<f32>::init(&c).unwrap();
        save_model(&path, &p).unwrap();
        let q = load_model::<f32>(&path).unwrap();
        assert_eq!(q.cfg, c);
        for ((na, ta, _), (nb, tb, _)) in p.named().iter().zip(q.named().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        let report = count_params_flops(&c, (16, 16)).unwrap();
        assert_eq!(report.params, p.num_scalars());
    }

    #[test]
    fn conv_cost_closed_form() {
        assert_eq!(conv_params(1, 1, 3), 10);
        assert_eq!(conv_macs(1, 1, 3, 4, 4), 144);
    }

    #[test]
    fn spectral_param_overhead_under_quarter() {
        let mut spectral = cfg(DownKind::WaveBlock, UpKind::IwaveBlock, WaveletKind::Dtcwt, WaveConv::GroupedShared);
        spectral.base_channels = 16;
        spectral.depth = 3;
        let mut baseline = spectral.clone();
        baseline.down_kind = DownKind::ConvBlock;
        let a = count_params_flops(&spectral, (64, 64)).unwrap();
        let b = count_params_flops(&baseline, (64, 64)).unwrap();
        let overhead = (a.params as f64 - b.params as f64) / b.params as f64;
        assert!(overhead > 0.0 && overhead < 0.25, "overhead {overhead}");
        assert!(a.macs > 0 && b.macs > 0);
    }

    #[test]
    fn eval_mode_is_pure() {
        let fb = FilterBank::default();
        let c = cfg(DownKind::WaveBlock, UpKind::IwaveBlock, WaveletKind::Haar, WaveConv::Full);
        let mut p = ModelParams::<f64>::init(&c).unwrap();
        let x = Tensor::<f64>::from_fn(&[1, 1, 16, 16], |i| (i % 5) as f64 * 0.2);
        let (a, _) = forward(&x, &mut p, Mode::Eval, &fb).unwrap();
        let (b, _) = forward(&x, &mut p, Mode::Eval, &fb).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
