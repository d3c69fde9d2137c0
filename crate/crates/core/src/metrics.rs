//! Segmentation metrics (Dice, HD95) and the Dice + cross-entropy training
//! loss with its analytic gradient.

use crate::data::Mask;
use crate::error::{CoreError, Result};
use crate::tensor::{Scalar, Tensor};

fn check_same_grid(a: &Mask, b: &Mask) -> Result<()> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(CoreError::shape(format!(
            "masks differ: ({},{}) vs ({},{})",
            a.h, a.w, b.h, b.w
        )));
    }
    Ok(())
}

/// Dice similarity coefficient for one class. Both masks empty -> 1.0;
/// exactly one empty -> 0.0.
pub fn dice(pred: &Mask, gt: &Mask, class: u8) -> Result<f64> {
    check_same_grid(pred, gt)?;
    let mut inter = 0usize;
    let mut a = 0usize;
    let mut b = 0usize;
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        let (pi, gi) = (p == class, g == class);
        a += pi as usize;
        b += gi as usize;
        inter += (pi && gi) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

// boundary under 4-connectivity: a class pixel with at least one non-class
// 4-neighbor; out-of-image counts as non-class
fn boundary(mask: &Mask, class: u8) -> Vec<(usize, usize)> {
    let (h, w) = (mask.h, mask.w);
    let at = |i: isize, j: isize| -> bool {
        i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w
            && mask.labels[i as usize * w + j as usize] == class
    };
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if mask.labels[i * w + j] != class {
                continue;
            }
            let (ii, jj) = (i as isize, j as isize);
            if !(at(ii - 1, jj) && at(ii + 1, jj) && at(ii, jj - 1) && at(ii, jj + 1)) {
                out.push((i, j));
            }
        }
    }
    out
}

fn nearest_dist(p: (usize, usize), set: &[(usize, usize)], spacing: f64) -> f64 {
    let mut best = f64::INFINITY;
    for &(i, j) in set {
        let dy = p.0 as f64 - i as f64;
        let dx = p.1 as f64 - j as f64;
        best = best.min(dy * dy + dx * dx);
    }
    best.sqrt() * spacing
}

/// 95th percentile (nearest-rank) of the pooled symmetric boundary
/// nearest-neighbor distances, in `spacing` units per pixel. Returns
/// `CoreError::Undefined` if either mask has no pixels of `class`.
pub fn hd95(pred: &Mask, gt: &Mask, class: u8, spacing: f64) -> Result<f64> {
    check_same_grid(pred, gt)?;
    let bp = boundary(pred, class);
    let bg = boundary(gt, class);
    if bp.is_empty() || bg.is_empty() {
        return Err(CoreError::Undefined(format!(
            "hd95 undefined: class {class} empty in {}",
            if bp.is_empty() { "prediction" } else { "ground truth" }
        )));
    }
    let mut dists: Vec<f64> = bp.iter().map(|&p| nearest_dist(p, &bg, spacing)).collect();
    dists.extend(bg.iter().map(|&p| nearest_dist(p, &bp, spacing)));
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.95 * dists.len() as f64).ceil() as usize).clamp(1, dists.len());
    Ok(dists[rank - 1])
}

/// Mean of soft-Dice loss and pixelwise cross-entropy over softmax
/// probabilities, with the analytic gradient w.r.t. the logits.
///
/// `logits` is (N,K,H,W); `masks` holds N label grids.
pub fn loss<T: Scalar>(logits: &Tensor<T>, masks: &[Mask]) -> Result<(f64, Tensor<T>)> {
    let (n, k, h, w) = logits.dims4()?;
    if masks.len() != n {
        return Err(CoreError::shape(format!("{} masks for batch {n}", masks.len())));
    }
    for m in masks {
        if (m.h, m.w) != (h, w) {
            return Err(CoreError::shape("mask/logit grid mismatch"));
        }
        if m.labels.iter().any(|&l| l as usize >= k) {
            return Err(CoreError::InvalidArgument(format!("mask label >= {k} classes")));
        }
    }
    let hw = h * w;
    let npix = (n * hw) as f64;
    let eps = 1e-6;

    // softmax probabilities in f64 for a stable loss/grad even in f32 nets
    let mut probs = vec![0.0f64; n * k * hw];
    for b in 0..n {
        for p in 0..hw {
            let mut mx = f64::NEG_INFINITY;
            for c in 0..k {
                mx = mx.max(logits.data()[(b * k + c) * hw + p].to_f64_());
            }
            let mut z = 0.0;
            for c in 0..k {
                let e = (logits.data()[(b * k + c) * hw + p].to_f64_() - mx).exp();
                probs[(b * k + c) * hw + p] = e;
                z += e;
            }
            for c in 0..k {
                probs[(b * k + c) * hw + p] /= z;
            }
        }
    }

    // cross-entropy and its gradient (p - onehot)/npix
    let mut ce = 0.0;
    for b in 0..n {
        for p in 0..hw {
            let g = masks[b].labels[p] as usize;
            ce -= probs[(b * k + g) * hw + p].max(1e-30).ln();
        }
    }
    ce /= npix;

    // soft Dice per class over the whole batch
    let mut inter = vec![0.0f64; k];
    let mut psum = vec![0.0f64; k];
    let mut gsum = vec![0.0f64; k];
    for b in 0..n {
        for p in 0..hw {
            let g = masks[b].labels[p] as usize;
            gsum[g] += 1.0;
            for c in 0..k {
                let pv = probs[(b * k + c) * hw + p];
                psum[c] += pv;
                if c == g {
                    inter[c] += pv;
                }
            }
        }
    }
    // smoothed in both numerator and denominator so absent classes score 1
    let mut dice_mean = 0.0;
    for c in 0..k {
        dice_mean += (2.0 * inter[c] + eps) / (psum[c] + gsum[c] + eps);
    }
    dice_mean /= k as f64;
    let dice_loss = 1.0 - dice_mean;
    let total = 0.5 * (ce + dice_loss);

    // dL/dp for the Dice term, then chain both terms through softmax
    let mut grad = Tensor::zeros(logits.shape());
    for b in 0..n {
        for p in 0..hw {
            let g = masks[b].labels[p] as usize;
            for c in 0..k {
                // Dice: dD_c/dp_c = 2*onehot/(U_c+eps) - (2*I_c+eps)/(U_c+eps)^2
                let u = psum[c] + gsum[c] + eps;
                let ddice_dp = -(1.0 / k as f64)
                    * (2.0 * ((c == g) as usize as f64) / u - (2.0 * inter[c] + eps) / (u * u));
                // CE in p-space: -onehot/p_g / npix
                let dce_dp = if c == g { -1.0 / probs[(b * k + c) * hw + p].max(1e-30) / npix } else { 0.0 };
                let dl_dp = 0.5 * (ddice_dp + dce_dp);
                // chain through softmax: dz_j = p_j * (dl_dp_j - sum_c dl_dp_c p_c)
                // accumulate the inner product lazily below
                grad.data_mut()[(b * k + c) * hw + p] = T::from_f64(dl_dp);
            }
            let mut dot = 0.0;
            for c in 0..k {
                dot += grad.data()[(b * k + c) * hw + p].to_f64_() * probs[(b * k + c) * hw + p];
            }
            for c in 0..k {
                let pv = probs[(b * k + c) * hw + p];
                let dl_dp = grad.data()[(b * k + c) * hw + p].to_f64_();
                grad.data_mut()[(b * k + c) * hw + p] = T::from_f64(pv * (dl_dp - dot));
            }
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from(rows: &[&[u8]]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        Mask { h, w, labels: rows.iter().flat_map(|r| r.iter().copied()).collect() }
    }

    #[test]
    fn dice_closed_forms() {
        let a = mask_from(&[&[1, 1], &[0, 0]]);
        let b = mask_from(&[&[0, 0], &[1, 1]]);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
        let one = mask_from(&[&[1, 0], &[0, 0]]);
        let two = mask_from(&[&[1, 1], &[0, 0]]);
        assert!((dice(&one, &two, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        // both empty for a class -> 1.0; one empty -> 0.0
        assert_eq!(dice(&a, &b, 2).unwrap(), 1.0);
        let empty = Mask::zeros(2, 2);
        assert_eq!(dice(&a, &empty, 1).unwrap(), 0.0);
    }

    #[test]
    fn dice_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = Mask { h: 8, w: 8, labels: (0..64).map(|_| rng.gen_range(0..3)).collect() };
            let b = Mask { h: 8, w: 8, labels: (0..64).map(|_| rng.gen_range(0..3)).collect() };
            for class in 0..3 {
                let d1 = dice(&a, &b, class).unwrap();
                let d2 = dice(&b, &a, class).unwrap();
                assert_eq!(d1, d2);
                assert!((0.0..=1.0).contains(&d1));
            }
        }
    }

    #[test]
    fn hd95_closed_forms() {
        let a = mask_from(&[&[0, 1, 0], &[0, 0, 0], &[0, 0, 0]]);
        assert_eq!(hd95(&a, &a, 1, 1.0).unwrap(), 0.0);
        let b = mask_from(&[&[0, 0, 0], &[0, 0, 0], &[0, 1, 0]]);
        // single pixels two rows apart
        assert!((hd95(&a, &b, 1, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((hd95(&a, &b, 1, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(hd95(&a, &Mask::zeros(3, 3), 1, 1.0).is_err());
    }

    // independent all-pairs oracle with its own boundary extraction
    fn hd95_oracle(pred: &Mask, gt: &Mask, class: u8) -> Option<f64> {
        let bnd = |m: &Mask| -> Vec<(f64, f64)> {
            let mut v = Vec::new();
            for i in 0..m.h as isize {
                for j in 0..m.w as isize {
                    if m.labels[i as usize * m.w + j as usize] != class {
                        continue;
                    }
                    let interior = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
                        .iter()
                        .all(|&(y, x)| {
                            y >= 0
                                && x >= 0
                                && (y as usize) < m.h
                                && (x as usize) < m.w
                                && m.labels[y as usize * m.w + x as usize] == class
                        });
                    if !interior {
                        v.push((i as f64, j as f64));
                    }
                }
            }
            v
        };
        let (a, b) = (bnd(pred), bnd(gt));
        if a.is_empty() || b.is_empty() {
            return None;
        }
        let mut all = Vec::new();
        for &p in &a {
            all.push(
                b.iter()
                    .map(|&q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min),
            );
        }
        for &q in &b {
            all.push(
                a.iter()
                    .map(|&p| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min),
            );
        }
        all.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let rank = ((0.95 * all.len() as f64).ceil() as usize).max(1);
        Some(all[rank - 1])
    }

    #[test]
    fn hd95_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        while checked < 200 {
            let size = rng.gen_range(4..=32);
            let density = rng.gen_range(0.05..0.5);
            let gen = |rng: &mut ChaCha8Rng| Mask {
                h: size,
                w: size,
                labels: (0..size * size)
                    .map(|_| (rng.gen_bool(density)) as u8)
                    .collect(),
            };
            let a = gen(&mut rng);
            let b = gen(&mut rng);
            match (hd95(&a, &b, 1, 1.0), hd95_oracle(&a, &b, 1)) {
                (Ok(v), Some(o)) => {
                    assert_eq!(v, o, "size {size}");
                    checked += 1;
                }
                (Err(_), None) => {}
                (got, want) => panic!("definedness mismatch: {got:?} vs {want:?}"),
            }
        }
    }

    #[test]
    fn loss_closed_forms() {
        // uniform logits, 2 classes: CE term is ln 2
        let logits = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let mask = Mask::zeros(4, 4);
        let (l, _) = loss(&logits, &[mask.clone()]).unwrap();
        // total = (ce + dice_loss)/2 with ce = ln 2
        let ce = std::f64::consts::LN_2;
        // uniform p=0.5: inter0 = 8, psum0 = 8, gsum0 = 16; class 1 is empty
        let d0 = (2.0 * 8.0 + 1e-6) / (8.0 + 16.0 + 1e-6);
        let d1 = 1e-6 / (8.0 + 1e-6);
        let want = 0.5 * (ce + 1.0 - 0.5 * (d0 + d1));
        assert!((l - want).abs() < 1e-9, "{l} vs {want}");

        // strongly correct logits -> tiny loss
        let mut strong = Tensor::<f64>::full(&[1, 2, 4, 4], -10.0);
        for p in 0..16 {
            strong.data_mut()[p] = 10.0; // class 0 everywhere, matching the mask
        }
        let (l2, _) = loss(&strong, &[mask]).unwrap();
        assert!(l2 < 0.01, "{l2}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::<f64>::from_fn(&[2, 3, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let masks: Vec<Mask> = (0..2)
            .map(|_| Mask { h: 4, w: 4, labels: (0..16).map(|_| rng.gen_range(0..3)).collect() })
            .collect();
        let (_, grad) = loss(&logits, &masks).unwrap();
        let eps = 1e-6;
        let mut x = logits.clone();
        for i in 0..x.numel() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + eps;
            let (fp, _) = loss(&x, &masks).unwrap();
            x.data_mut()[i] = orig - eps;
            let (fm, _) = loss(&x, &masks).unwrap();
            x.data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            assert!(
                (grad.data()[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "idx {i}: {} vs {fd}",
                grad.data()[i]
            );
        }
    }
}
