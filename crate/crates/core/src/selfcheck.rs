//! Runtime invariant suite: every check returns a [`CheckResult`] so the CLI
//! can print one PASS/FAIL line per property and exit nonzero on any failure.

use crate::blocks::{rearrange_forward, rearrange_inverse};
use crate::data::Mask;
use crate::error::Result;
use crate::metrics::{dice, hd95};
use crate::tensor::ops::{bilinear_upsample2, maxpool2};
use crate::tensor::Tensor;
use crate::wavelet::{
    dtcwt_forward, dtcwt_inverse, haar_forward, haar_inverse, validate_filterbank, CheckResult,
    FilterBank,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn result(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: name.to_string(), passed, detail }
}

/// Forward/inverse round trip over sizes {8,16,32}^2, channels {1,3},
/// seeds {0,1,2}, at every level count the size admits.
pub fn check_perfect_reconstruction() -> CheckResult {
    let fb = FilterBank::default();
    let mut worst = 0.0f64;
    for &size in &[8usize, 16, 32] {
        for &ch in &[1usize, 3] {
            for seed in 0..3u64 {
                let x = rand_tensor(&[1, ch, size, size], 1000 + seed);
                let max_levels = if size >= 32 { 3 } else if size >= 16 { 2 } else { 1 };
                for levels in 1..=max_levels {
                    let s = match dtcwt_forward(&x, levels, &fb) {
                        Ok(s) => s,
                        Err(e) => return result("perfect_reconstruction", false, e.to_string()),
                    };
                    let y = match dtcwt_inverse(&s, &fb) {
                        Ok(y) => y,
                        Err(e) => return result("perfect_reconstruction", false, e.to_string()),
                    };
                    worst = worst.max(y.sub(&x).unwrap().max_abs());
                }
            }
        }
    }
    result(
        "perfect_reconstruction",
        worst < 1e-8,
        format!("max abs reconstruction error {worst:.3e} (bound 1e-8)"),
    )
}

/// The spectral path loses nothing before the learned conv; the max-pool +
/// bilinear baseline on the same inputs loses > 0.1 relative L2.
pub fn check_block_losslessness() -> CheckResult {
    let fb = FilterBank::default();
    let x = rand_tensor(&[2, 3, 16, 16], 77);
    let s = match dtcwt_forward(&x, 1, &fb) {
        Ok(s) => s,
        Err(e) => return result("block_losslessness", false, e.to_string()),
    };
    let r = rearrange_forward(&s.lowpass, &s.highpass[0]).unwrap();
    let (low, high) = rearrange_inverse(&r).unwrap();
    let back = dtcwt_inverse(
        &crate::wavelet::Subbands { lowpass: low, highpass: vec![high], original_hw: (16, 16) },
        &fb,
    )
    .unwrap();
    let spectral_err = back.sub(&x).unwrap().max_abs();

    let (pooled, _) = maxpool2(&x).unwrap();
    let up = bilinear_upsample2(&pooled).unwrap();
    let baseline_rel = (up.sub(&x).unwrap().sq_norm() / x.sq_norm()).sqrt();

    let passed = spectral_err < 1e-8 && baseline_rel > 0.1;
    result(
        "block_losslessness",
        passed,
        format!(
            "spectral path max err {spectral_err:.3e} (< 1e-8); pool+bilinear rel L2 {baseline_rel:.3} (> 0.1)"
        ),
    )
}

fn level2_dtcwt_orientation_energies(x: &Tensor<f64>, fb: &FilterBank) -> Result<[f64; 6]> {
    let s = dtcwt_forward(x, 2, fb)?;
    let hp = &s.highpass[1];
    let (_, _, _, c, h, w) = {
        let sh = hp.shape();
        (sh[0], sh[1], sh[2], sh[3], sh[4], sh[5])
    };
    let plane = c * h * w;
    let mut e = [0.0f64; 6];
    for reim in 0..2 {
        for orient in 0..6 {
            let off = (reim * 6 + orient) * plane;
            for i in 0..plane {
                let v = hp.data()[off + i];
                e[orient] += v * v;
            }
        }
    }
    Ok(e)
}

fn level2_haar_detail_energies(x: &Tensor<f64>) -> Result<[f64; 3]> {
    let l1 = haar_forward(x)?;
    let (_, c4, _, _) = l1.dims4()?;
    let c = c4 / 4;
    let ll = crate::tensor::ops::slice_channels(&l1, 0, c)?;
    let l2 = haar_forward(&ll)?;
    let mut e = [0.0f64; 3];
    for band in 0..3 {
        let d = crate::tensor::ops::slice_channels(&l2, (band + 1) * c, (band + 2) * c)?;
        e[band] = d.sq_norm();
    }
    Ok(e)
}

fn step_edge(size: usize, row: usize) -> Tensor<f64> {
    Tensor::from_fn(&[1, 1, size, size], |i| if (i / size) % size >= row { 1.0 } else { 0.0 })
}

fn rel_change(a: f64, b: f64) -> f64 {
    (a - b).abs() / (0.5 * (a + b)).max(1e-300)
}

/// Shifting a step edge by one pixel barely moves DTCWT per-orientation
/// energies at level 2 but swings the critically-sampled Haar details.
pub fn check_shift_invariance() -> CheckResult {
    let fb = FilterBank::default();
    let x0 = step_edge(32, 16);
    let x1 = step_edge(32, 17);
    let (e0, e1) = match (
        level2_dtcwt_orientation_energies(&x0, &fb),
        level2_dtcwt_orientation_energies(&x1, &fb),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return result("shift_invariance", false, "transform failed".into()),
    };
    // only orientations the edge actually excites; the rest sit at
    // round-off level where a relative change is meaningless
    let floor = 1e-2 * e0.iter().cloned().fold(0.0, f64::max);
    let dtcwt_change = (0..6)
        .filter(|&o| e0[o].max(e1[o]) > floor)
        .map(|o| rel_change(e0[o], e1[o]))
        .fold(0.0, f64::max);
    let (h0, h1) = (
        level2_haar_detail_energies(&x0).unwrap(),
        level2_haar_detail_energies(&x1).unwrap(),
    );
    let haar_change = (0..3).map(|b| rel_change(h0[b], h1[b])).fold(0.0, f64::max);
    let passed = dtcwt_change < 0.15 && haar_change > 0.40;
    result(
        "shift_invariance",
        passed,
        format!(
            "DTCWT max per-orientation energy change {dtcwt_change:.4} (< 0.15); Haar max sub-band change {haar_change:.3} (> 0.40)"
        ),
    )
}

/// Haar round trip and orthonormality on a random batch.
pub fn check_haar() -> CheckResult {
    let x = rand_tensor(&[2, 2, 16, 16], 33);
    let y = match haar_forward(&x).and_then(|c| haar_inverse(&c)) {
        Ok(y) => y,
        Err(e) => return result("haar_roundtrip", false, e.to_string()),
    };
    let err = y.sub(&x).unwrap().max_abs();
    let energy = (haar_forward(&x).unwrap().sq_norm() - x.sq_norm()).abs();
    result(
        "haar_roundtrip",
        err < 1e-12 && energy < 1e-9,
        format!("round-trip err {err:.3e}, energy drift {energy:.3e}"),
    )
}

fn brute_force_hd95(pred: &Mask, gt: &Mask, class: u8) -> Option<f64> {
    let pts = |m: &Mask| -> Vec<(i64, i64)> {
        let mut v = Vec::new();
        for r in 0..m.h as i64 {
            for c in 0..m.w as i64 {
                if m.labels[(r * m.w as i64 + c) as usize] != class {
                    continue;
                }
                let mut boundary = false;
                for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= m.h as i64 || nc >= m.w as i64 {
                        boundary = true;
                    } else if m.labels[(nr * m.w as i64 + nc) as usize] != class {
                        boundary = true;
                    }
                }
                if boundary {
                    v.push((r, c));
                }
            }
        }
        v
    };
    let a = pts(pred);
    let b = pts(gt);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let nearest = |from: &[(i64, i64)], to: &[(i64, i64)]| -> Vec<f64> {
        from.iter()
            .map(|&(r, c)| {
                to.iter()
                    .map(|&(r2, c2)| (((r - r2).pow(2) + (c - c2).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    };
    let mut all = nearest(&a, &b);
    all.extend(nearest(&b, &a));
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let rank = ((0.95 * all.len() as f64).ceil() as usize).max(1) - 1;
    Some(all[rank])
}

/// Dice closed forms plus HD95 agreement with an all-pairs oracle.
pub fn check_metrics() -> CheckResult {
    let m = |labels: Vec<u8>, h: usize, w: usize| Mask { h, w, labels };
    let a = m(vec![0, 1, 1, 0], 2, 2);
    let b = m(vec![0, 1, 0, 0], 2, 2);
    if (dice(&a, &a, 1).unwrap() - 1.0).abs() > 0.0
        || (dice(&a, &b, 1).unwrap() - 2.0 / 3.0).abs() > 1e-15
    {
        return result("metrics", false, "dice closed form mismatch".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for trial in 0..40 {
        let (h, w) = (rng.gen_range(4..=16), rng.gen_range(4..=16));
        let mut mk = || -> Mask {
            let mut rng2 = ChaCha8Rng::seed_from_u64(rng.gen());
            Mask {
                h,
                w,
                labels: (0..h * w).map(|_| u8::from(rng2.gen_bool(0.4))).collect(),
            }
        };
        let (p, g) = (mk(), mk());
        let ours = hd95(&p, &g, 1, 1.0).ok();
        let oracle = brute_force_hd95(&p, &g, 1);
        let agree = match (ours, oracle) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() < 1e-9,
            _ => false,
        };
        if !agree {
            return result(
                "metrics",
                false,
                format!("hd95 disagrees with brute force on trial {trial}: {ours:?} vs {oracle:?}"),
            );
        }
    }
    result("metrics", true, "dice closed forms exact; hd95 matches brute force on 40 masks".into())
}

/// Filter bank self-validation (orthonormality, PR conditions).
pub fn check_filter_bank() -> CheckResult {
    let report = validate_filterbank(&FilterBank::default());
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.clone())
        .collect();
    result(
        "filter_bank",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} filter conditions hold", report.checks.len())
        } else {
            format!("failing: {}", failed.join(", "))
        },
    )
}

/// Spot finite-difference check on a Wave-Block (the full per-op suite runs
/// in the test harness; this is the fast runtime version).
pub fn check_gradients() -> CheckResult {
    use crate::blocks::{wave_block_backward, wave_block_forward, WaveBlockParams, WaveConv};
    use crate::tensor::{BatchNormState, ConvParams, Mode};
    use crate::wavelet::WaveletKind;
    let fb = FilterBank::default();
    let x = rand_tensor(&[1, 2, 8, 8], 55);
    let c_in = WaveBlockParams::<f64>::conv_in_channels(2, WaveletKind::Dtcwt, WaveConv::Full);
    let mut rng = ChaCha8Rng::seed_from_u64(56);
    let w = Tensor::from_fn(&[4, c_in, 3, 3], |_| rng.gen_range(-0.2..0.2));
    let mut p = WaveBlockParams {
        conv: ConvParams::new(w, Tensor::zeros(&[4])).unwrap(),
        bn: BatchNormState::new(4, 0.1),
        wavelet: WaveletKind::Dtcwt,
        conv_mode: WaveConv::Full,
    };
    let (y, cache) = wave_block_forward(&x, &mut p, Mode::Train, &fb).unwrap();
    let r = rand_tensor(y.shape(), 57);
    let (gx, _) = wave_block_backward(&cache, &p, &r, &fb).unwrap();
    let mut worst = 0.0f64;
    let eps = 1e-6;
    for &i in &[0usize, 17, 63, 100] {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let f = |t: &Tensor<f64>| -> f64 {
            let (yy, _) = wave_block_forward(t, &mut p.clone(), Mode::Train, &fb).unwrap();
            yy.data().iter().zip(r.data()).map(|(&a, &b)| a * b).sum()
        };
        let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
        let an = gx.data()[i];
        let denom = fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max((fd - an).abs() / denom);
    }
    result(
        "gradients",
        worst < 1e-5,
        format!("wave block input-gradient FD rel err {worst:.3e} (< 1e-5)"),
    )
}

/// The full suite, in display order.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_filter_bank(),
        check_perfect_reconstruction(),
        check_haar(),
        check_block_losslessness(),
        check_shift_invariance(),
        check_gradients(),
        check_metrics(),
    ]
}
