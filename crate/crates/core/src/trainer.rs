//! SGD training loop (poly LR schedule, heavy-ball momentum), dataset
//! splitting, evaluation, and the block-substitution ablation grid.

use crate::data::{Mask, Sample};
use crate::error::{CoreError, Result};
use crate::metrics::{dice, hd95, loss};
use crate::network::{
    backward, forward, DownKind, ModelParams, NetworkConfig, UpKind,
};
use crate::tensor::{Mode, Scalar, Tensor};
use crate::wavelet::{FilterBank, WaveletKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub initial_lr: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_power")]
    pub lr_power: f64,
    pub max_iters: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_split")]
    pub split: (f64, f64, f64),
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_repeats")]
    pub num_repeats: usize,
    /// Stop once validation mean foreground Dice reaches this value.
    #[serde(default)]
    pub stop_at_val_dice: Option<f64>,
}

fn d_lr() -> f64 {
    0.01
}
fn d_momentum() -> f64 {
    0.99
}
fn d_power() -> f64 {
    0.9
}
fn d_batch() -> usize {
    8
}
fn d_split() -> (f64, f64, f64) {
    (0.7, 0.1, 0.2)
}
fn d_eval_every() -> usize {
    50
}
fn d_repeats() -> usize {
    5
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split;
        if (a + b + c - 1.0).abs() > 1e-9 || a <= 0.0 || b < 0.0 || c < 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "split {:?} must be nonnegative and sum to 1",
                self.split
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::InvalidArgument(format!(
                "momentum {} outside [0,1)",
                self.momentum
            )));
        }
        if self.max_iters == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(CoreError::InvalidArgument(
                "max_iters, batch_size, eval_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// lr = initial · (1 − iter/max)^power
pub fn poly_lr(iter: usize, cfg: &TrainConfig) -> Result<f64> {
    if iter > cfg.max_iters {
        return Err(CoreError::InvalidArgument(format!(
            "iter {iter} past max_iters {}",
            cfg.max_iters
        )));
    }
    let frac = 1.0 - iter as f64 / cfg.max_iters as f64;
    Ok(cfg.initial_lr * frac.powf(cfg.lr_power))
}

/// Heavy-ball update: v ← momentum·v + g; p ← p − lr·v.
pub fn sgd_momentum_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(CoreError::shape(format!(
            "sgd step: param {:?} grad {:?} velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    let m = T::from_f64(momentum);
    let l = T::from_f64(lr);
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut().iter_mut())
    {
        *v = m * *v + g;
        *p -= l * *v;
    }
    Ok(())
}

/// Deterministic shuffle-split into (train, val, test) index sets.
/// Fractional sizes floor to integers; the remainder goes to train.
pub fn split_indices(
    n: usize,
    split: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < 10 {
        return Err(CoreError::InvalidArgument(format!(
            "dataset of {n} samples is too small to split"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = (n as f64 * split.1).floor() as usize;
    let n_test = (n as f64 * split.2).floor() as usize;
    let n_train = n - n_val - n_test;
    let train = idx[..n_train].to_vec();
    let val = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Ok((train, val, test))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub iter: usize,
    /// Mean Dice per class over the evaluated split.
    pub class_dice: Vec<f64>,
    /// Mean HD95 per class; None when undefined on every image.
    pub class_hd95: Vec<Option<f64>>,
    pub mean_fg_dice: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    pub evals: Vec<EvalRecord>,
    pub best_iter: usize,
    pub best_val_dice: f64,
    pub test: EvalRecord,
    pub wall_clock_secs: f64,
    pub config_hash: String,
}

fn config_hash(net: &NetworkConfig, train: &TrainConfig) -> String {
    let mut h = DefaultHasher::new();
    serde_json::to_string(net).unwrap().hash(&mut h);
    serde_json::to_string(train).unwrap().hash(&mut h);
    format!("{:016x}", h.finish())
}

fn batch_of<T: Scalar>(samples: &[Sample], ids: &[usize]) -> (Tensor<T>, Vec<Mask>) {
    let (h, w) = (samples[ids[0]].mask.h, samples[ids[0]].mask.w);
    let mut x = Tensor::<T>::zeros(&[ids.len(), 1, h, w]);
    let mut masks = Vec::with_capacity(ids.len());
    for (bi, &i) in ids.iter().enumerate() {
        let img = &samples[i].image;
        let dst = &mut x.data_mut()[bi * h * w..(bi + 1) * h * w];
        for (d, &s) in dst.iter_mut().zip(img.data()) {
            *d = T::from_f64(s as f64);
        }
        masks.push(samples[i].mask.clone());
    }
    (x, masks)
}

/// Per-image argmax over class logits.
pub fn logits_to_masks<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<Mask>> {
    let (n, k, h, w) = logits.dims4()?;
    let plane = h * w;
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let mut labels = vec![0u8; plane];
        for p in 0..plane {
            let mut best = T::neg_infinity();
            let mut arg = 0u8;
            for c in 0..k {
                let v = logits.data()[(b * k + c) * plane + p];
                if v > best {
                    best = v;
                    arg = c as u8;
                }
            }
            labels[p] = arg;
        }
        out.push(Mask { h, w, labels });
    }
    Ok(out)
}

/// Mean per-class Dice/HD95 over a split; HD95 is averaged over the images
/// where it is defined.
pub fn evaluate<T: Scalar>(
    params: &mut ModelParams<T>,
    samples: &[Sample],
    ids: &[usize],
    fb: &FilterBank,
    iter: usize,
) -> Result<EvalRecord> {
    let k = params.cfg.num_classes;
    let mut dice_sum = vec![0.0f64; k];
    let mut hd_sum = vec![0.0f64; k];
    let mut hd_n = vec![0usize; k];
    for &i in ids {
        let (x, masks) = batch_of::<T>(samples, &[i]);
        let (logits, _) = forward(&x, params, Mode::Eval, fb)?;
        let pred = &logits_to_masks(&logits)?[0];
        for c in 0..k {
            dice_sum[c] += dice(pred, &masks[0], c as u8)?;
            if let Ok(d) = hd95(pred, &masks[0], c as u8, 1.0) {
                hd_sum[c] += d;
                hd_n[c] += 1;
            }
        }
    }
    let m = ids.len() as f64;
    let class_dice: Vec<f64> = dice_sum.iter().map(|s| s / m).collect();
    let class_hd95: Vec<Option<f64>> = hd_sum
        .iter()
        .zip(&hd_n)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    let mean_fg_dice = if k > 1 {
        class_dice[1..].iter().sum::<f64>() / (k - 1) as f64
    } else {
        class_dice[0]
    };
    Ok(EvalRecord { iter, class_dice, class_hd95, mean_fg_dice })
}

pub fn train(
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    dataset: &[Sample],
) -> Result<(ModelParams<f32>, RunRecord)> {
    train_cfg.validate()?;
    let fb = FilterBank::default();
    let start = Instant::now();
    let (train_ids, val_ids, _test_ids) =
        split_indices(dataset.len(), train_cfg.split, train_cfg.seed)?;
    let mut params = ModelParams::<f32>::init(net_cfg)?;
    let mut velocity: Vec<Tensor<f32>> = params
        .named()
        .iter()
        .filter(|(_, _, tr)| *tr)
        .map(|(_, t, _)| Tensor::zeros(t.shape()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0xb1ff);

    let mut record = RunRecord {
        losses: Vec::with_capacity(train_cfg.max_iters),
        lrs: Vec::with_capacity(train_cfg.max_iters),
        evals: Vec::new(),
        best_iter: 0,
        best_val_dice: f64::NEG_INFINITY,
        test: EvalRecord { iter: 0, class_dice: vec![], class_hd95: vec![], mean_fg_dice: 0.0 },
        wall_clock_secs: 0.0,
        config_hash: config_hash(net_cfg, train_cfg),
    };
    let mut best = params.clone();

    for iter in 0..train_cfg.max_iters {
        let lr = poly_lr(iter, train_cfg)?;
        let ids: Vec<usize> = (0..train_cfg.batch_size)
            .map(|_| train_ids[rng.gen_range(0..train_ids.len())])
            .collect();
        let (x, masks) = batch_of::<f32>(dataset, &ids);
        let (logits, cache) = forward(&x, &mut params, Mode::Train, &fb)?;
        let (l, grad_logits) = loss(&logits, &masks)?;
        if !l.is_finite() {
            return Err(CoreError::Diverged(format!(
                "loss became {l} at iteration {iter} (lr {lr:.3e})"
            )));
        }
        let grads = backward(&cache, &params, &grad_logits, &fb)?;
        if !grads.all_finite() {
            return Err(CoreError::Diverged(format!(
                "non-finite gradient at iteration {iter} (lr {lr:.3e})"
            )));
        }
        {
            let flat_grads = grads.flat();
            let mut trainable: Vec<&mut Tensor<f32>> = Vec::with_capacity(flat_grads.len());
            for (_, t, tr) in params.named_mut() {
                if tr {
                    trainable.push(t);
                }
            }
            for ((p, g), v) in trainable.into_iter().zip(flat_grads).zip(velocity.iter_mut()) {
                sgd_momentum_step(p, g, v, lr, train_cfg.momentum)?;
            }
        }
        record.losses.push(l);
        record.lrs.push(lr);

        let last = iter + 1 == train_cfg.max_iters;
        if !val_ids.is_empty() && ((iter + 1) % train_cfg.eval_every == 0 || last) {
            let ev = evaluate(&mut params, dataset, &val_ids, &fb, iter + 1)?;
            let fg = ev.mean_fg_dice;
            record.evals.push(ev);
            if fg > record.best_val_dice {
                record.best_val_dice = fg;
                record.best_iter = iter + 1;
                best = params.clone();
            }
            if let Some(target) = train_cfg.stop_at_val_dice {
                if fg >= target {
                    break;
                }
            }
        }
    }
    if record.evals.is_empty() {
        best = params;
        record.best_val_dice = f64::NAN;
    }
    let (_, _, test_ids) = split_indices(dataset.len(), train_cfg.split, train_cfg.seed)?;
    record.test = evaluate(&mut best, dataset, &test_ids, &fb, record.best_iter)?;
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((best, record))
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub wavelet: WaveletKind,
    pub down_kind: DownKind,
    pub up_kind: UpKind,
    /// Mean/std of the per-class test Dice across repeats.
    pub dice_mean: Vec<f64>,
    pub dice_std: Vec<f64>,
    pub mean_fg_dice: f64,
    /// Test mean foreground Dice of each successful repeat, in order.
    pub per_repeat_fg_dice: Vec<f64>,
    pub repeats_done: usize,
    pub failures: Vec<String>,
}

/// The Table-4-style grid: every {down, up} block combination under each
/// wavelet, trained `num_repeats` times with distinct seeds.
pub fn ablate(
    net_template: &NetworkConfig,
    train_cfg: &TrainConfig,
    dataset: &[Sample],
) -> Result<Vec<AblationRow>> {
    let combos = [
        (DownKind::ConvBlock, UpKind::LinearUp),
        (DownKind::WaveBlock, UpKind::LinearUp),
        (DownKind::ConvBlock, UpKind::IwaveBlock),
        (DownKind::WaveBlock, UpKind::IwaveBlock),
    ];
    let k = net_template.num_classes;
    let mut rows = Vec::new();
    for wavelet in [WaveletKind::Haar, WaveletKind::Dtcwt] {
        for (down, up) in combos {
            let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); k];
            let mut per_repeat_fg_dice = Vec::new();
            let mut failures = Vec::new();
            for rep in 0..train_cfg.num_repeats {
                let mut nc = net_template.clone();
                nc.wavelet = wavelet;
                nc.down_kind = down;
                nc.up_kind = up;
                nc.seed = net_template.seed.wrapping_add(rep as u64);
                let mut tc = train_cfg.clone();
                tc.seed = train_cfg.seed.wrapping_add(rep as u64);
                match train(&nc, &tc, dataset) {
                    Ok((_, rec)) => {
                        for c in 0..k {
                            per_class[c].push(rec.test.class_dice[c]);
                        }
                        per_repeat_fg_dice.push(rec.test.mean_fg_dice);
                    }
                    Err(e) => failures.push(format!("repeat {rep}: {e}")),
                }
            }
            let repeats_done = per_class[0].len();
            let mean_std = |v: &[f64]| -> (f64, f64) {
                if v.is_empty() {
                    return (f64::NAN, f64::NAN);
                }
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
                (m, var.sqrt())
            };
            let stats: Vec<(f64, f64)> = per_class.iter().map(|v| mean_std(v)).collect();
            let dice_mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
            let dice_std: Vec<f64> = stats.iter().map(|s| s.1).collect();
            let mean_fg_dice = if k > 1 {
                dice_mean[1..].iter().sum::<f64>() / (k - 1) as f64
            } else {
                dice_mean[0]
            };
            rows.push(AblationRow {
                wavelet,
                down_kind: down,
                up_kind: up,
                dice_mean,
                dice_std,
                mean_fg_dice,
                per_repeat_fg_dice,
                repeats_done,
                failures,
            });
        }
    }
    Ok(rows)
}

pub fn write_loss_csv(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iter,loss,lr")?;
    for (i, (l, lr)) in rec.losses.iter().zip(&rec.lrs).enumerate() {
        writeln!(f, "{i},{l},{lr}")?;
    }
    Ok(())
}

pub fn write_eval_csv(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "eval_iter,class,dice,hd95")?;
    for ev in rec.evals.iter().chain(std::iter::once(&rec.test)) {
        for (c, d) in ev.class_dice.iter().enumerate() {
            let hd = match ev.class_hd95[c] {
                Some(v) => format!("{v}"),
                None => String::new(),
            };
            writeln!(f, "{},{c},{d},{hd}", ev.iter)?;
        }
    }
    Ok(())
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let k = rows.first().map(|r| r.dice_mean.len()).unwrap_or(0);
    let mut header = String::from("wavelet,down_kind,up_kind,repeats,mean_fg_dice");
    for c in 0..k {
        header.push_str(&format!(",class{c}_dice_mean,class{c}_dice_std"));
    }
    header.push_str(",failures");
    writeln!(f, "{header}")?;
    for r in rows {
        let mut line = format!(
            "{:?},{:?},{:?},{},{}",
            r.wavelet, r.down_kind, r.up_kind, r.repeats_done, r.mean_fg_dice
        );
        for c in 0..k {
            line.push_str(&format!(",{},{}", r.dice_mean[c], r.dice_std[c]));
        }
        line.push_str(&format!(",{}", r.failures.join("; ").replace(',', ";")));
        writeln!(f, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::WaveConv;
    use crate::data::SyntheticSpec;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            initial_lr: 0.01,
            momentum: 0.99,
            lr_power: 0.9,
            max_iters: 50,
            batch_size: 4,
            split: (0.7, 0.1, 0.2),
            eval_every: 25,
            seed: 3,
            num_repeats: 1,
            stop_at_val_dice: None,
        }
    }

    fn tiny_net(down: DownKind, up: UpKind) -> NetworkConfig {
        NetworkConfig {
            in_channels: 1,
            num_classes: 2,
            base_channels: 4,
            depth: 1,
            down_kind: down,
            up_kind: up,
            wavelet: WaveletKind::Dtcwt,
            wave_conv: WaveConv::Full,
            bn_momentum: 0.1,
            synth_bn: true,
            bottleneck: true,
            seed: 11,
        }
    }

    #[test]
    fn poly_lr_schedule() {
        let mut cfg = tiny_cfg();
        cfg.max_iters = 100;
        assert_eq!(poly_lr(0, &cfg).unwrap(), 0.01);
        assert_eq!(poly_lr(100, &cfg).unwrap(), 0.0);
        let mid = poly_lr(50, &cfg).unwrap();
        assert!((mid - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!(poly_lr(101, &cfg).is_err());
        let mut prev = f64::INFINITY;
        for it in 0..=100 {
            let lr = poly_lr(it, &cfg).unwrap();
            assert!(lr < prev);
            prev = lr;
        }
    }

    #[test]
    fn sgd_closed_forms() {
        let shape = [3usize];
        let mut p = Tensor::from_vec(&shape, vec![1.0f64, -2.0, 0.5]).unwrap();
        let g = Tensor::from_vec(&shape, vec![0.1f64, 0.2, -0.3]).unwrap();
        let mut v = Tensor::<f64>::zeros(&shape);
        // zero grads leave params fixed
        let z = Tensor::<f64>::zeros(&shape);
        sgd_momentum_step(&mut p, &z, &mut v, 0.5, 0.9).unwrap();
        assert_eq!(p.data(), [1.0, -2.0, 0.5]);
        // momentum 0 is plain SGD
        sgd_momentum_step(&mut p, &g, &mut v, 0.5, 0.0).unwrap();
        assert!((p.data()[0] - (1.0 - 0.05)).abs() < 1e-15);
        // two steps with constant grad: displacement lr*g*(2+momentum)
        let mut p2 = Tensor::<f64>::zeros(&shape);
        let mut v2 = Tensor::<f64>::zeros(&shape);
        let mom = 0.99;
        sgd_momentum_step(&mut p2, &g, &mut v2, 0.5, mom).unwrap();
        sgd_momentum_step(&mut p2, &g, &mut v2, 0.5, mom).unwrap();
        for (i, &x) in p2.data().iter().enumerate() {
            let want = -0.5 * g.data()[i] * (2.0 + mom);
            assert!((x - want).abs() < 1e-14);
        }
        let bad = Tensor::<f64>::zeros(&[2]);
        assert!(sgd_momentum_step(&mut p2, &bad, &mut v2, 0.5, mom).is_err());
    }

    #[test]
    fn split_sizes_and_coverage() {
        let (tr, va, te) = split_indices(100, (0.7, 0.1, 0.2), 5).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (70, 10, 20));
        let (tr, va, te) = split_indices(10, (0.7, 0.1, 0.2), 5).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (7, 1, 2));
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(split_indices(9, (0.7, 0.1, 0.2), 5).is_err());
    }

    #[test]
    fn smoke_training_all_variants() {
        let spec = SyntheticSpec::blobs(16, 12, 21);
        let data = crate::data::generate(&spec).unwrap();
        for down in [DownKind::ConvBlock, DownKind::WaveBlock] {
            for up in [UpKind::LinearUp, UpKind::IwaveBlock] {
                let (_, rec) = train(&tiny_net(down, up), &tiny_cfg(), &data).unwrap();
                let head: f64 = rec.losses[..10].iter().sum::<f64>() / 10.0;
                let tail: f64 = rec.losses[40..].iter().sum::<f64>() / 10.0;
                assert!(
                    tail < head,
                    "{down:?}/{up:?}: loss did not decrease ({head} -> {tail})"
                );
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let spec = SyntheticSpec::blobs(16, 12, 22);
        let data = crate::data::generate(&spec).unwrap();
        let nc = tiny_net(DownKind::WaveBlock, UpKind::IwaveBlock);
        let mut tc = tiny_cfg();
        tc.max_iters = 20;
        tc.eval_every = 10;
        let (p1, r1) = train(&nc, &tc, &data).unwrap();
        let (p2, r2) = train(&nc, &tc, &data).unwrap();
        assert_eq!(r1.losses, r2.losses);
        assert_eq!(r1.evals, r2.evals);
        assert_eq!(r1.config_hash, r2.config_hash);
        for ((_, a, _), (_, b, _)) in p1.named().iter().zip(p2.named().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn nan_input_aborts_with_diagnostic() {
        let spec = SyntheticSpec::blobs(16, 12, 23);
        let mut data = crate::data::generate(&spec).unwrap();
        for s in data.iter_mut() {
            s.image.data_mut()[0] = f32::NAN;
        }
        let err = train(&tiny_net(DownKind::ConvBlock, UpKind::LinearUp), &tiny_cfg(), &data)
            .unwrap_err();
        assert!(matches!(err, CoreError::Diverged(_)), "{err}");
        assert!(err.to_string().contains("iteration"));
    }

    #[test]
    fn ablation_grid_structure() {
        let spec = SyntheticSpec::blobs(16, 12, 24);
        let data = crate::data::generate(&spec).unwrap();
        let mut tc = tiny_cfg();
        tc.max_iters = 5;
        tc.eval_every = 5;
        tc.num_repeats = 1;
        let rows = ablate(&tiny_net(DownKind::WaveBlock, UpKind::IwaveBlock), &tc, &data).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.repeats_done == 1 && r.failures.is_empty()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ablation.csv");
        write_ablation_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("wavelet,down_kind,up_kind,"));
    }

    #[test]
    fn run_record_csvs() {
        let spec = SyntheticSpec::blobs(16, 12, 25);
        let data = crate::data::generate(&spec).unwrap();
        let mut tc = tiny_cfg();
        tc.max_iters = 10;
        tc.eval_every = 5;
        let (_, rec) = train(&tiny_net(DownKind::ConvBlock, UpKind::LinearUp), &tc, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let lp = dir.path().join("loss.csv");
        let ep = dir.path().join("eval.csv");
        write_loss_csv(&lp, &rec).unwrap();
        write_eval_csv(&ep, &rec).unwrap();
        let lt = std::fs::read_to_string(&lp).unwrap();
        assert_eq!(lt.lines().count(), 11);
        assert!(lt.lines().nth(1).unwrap().starts_with("0,"));
        let et = std::fs::read_to_string(&ep).unwrap();
        assert!(et.starts_with("eval_iter,class,dice,hd95"));
    }
}
