//! Filter bank data for the dual-tree transform and its validation.
//!
//! Level 1 uses a near-symmetric biorthogonal (13,19)-tap pair; levels >= 2
//! use a 14-tap quarter-sample-shift orthogonal pair. The coefficients are
//! data, not magic numbers: `validate_filterbank` checks perfect
//! reconstruction, zero DC gain of the highpass filters, the level-1
//! one-sample translate between trees and the half-sample delay condition
//! at the Q-shift levels.

/// Analysis lowpass, level 1 (13-tap, dyadic, zero at Nyquist).
pub const LEVEL1_ANALYSIS_LOW: [f64; 13] = [
    -9.0 / 5120.0,
    0.0,
    114.0 / 5120.0,
    -240.0 / 5120.0,
    -247.0 / 5120.0,
    1520.0 / 5120.0,
    2844.0 / 5120.0,
    1520.0 / 5120.0,
    -247.0 / 5120.0,
    -240.0 / 5120.0,
    114.0 / 5120.0,
    0.0,
    -9.0 / 5120.0,
];

/// Synthesis lowpass, level 1 (19-tap). Together with
/// [`LEVEL1_ANALYSIS_LOW`] the product is an exact halfband filter.
pub const LEVEL1_SYNTH_LOW: [f64; 19] = [
    7.06263509434337350e-05,
    0.0,
    -1.34190090336978526e-03,
    -1.88336935849156627e-03,
    7.15680630912096487e-03,
    2.38560181527476857e-02,
    -5.56431216023933334e-02,
    -5.16880592129370167e-02,
    2.99757589845698724e-01,
    5.59430820837361731e-01,
    2.99757589845698724e-01,
    -5.16880592129370167e-02,
    -5.56431216023933334e-02,
    2.38560181527476857e-02,
    7.15680630912096487e-03,
    -1.88336935849156627e-03,
    -1.34190090336978526e-03,
    0.0,
    7.06263509434337350e-05,
];

/// Q-shift lowpass prototype (14-tap, orthonormal, group delay ~ 6.25).
/// Tree A uses its time reverse (delay ~ 6.75), tree B uses it as is.
pub const QSHIFT_LOW: [f64; 14] = [
    3.25313715101168202e-03,
    -3.88320656737672952e-03,
    3.46602325037555642e-02,
    -3.88726874191871324e-02,
    -1.17204015652135646e-01,
    2.75295484842787985e-01,
    7.56145531944795946e-01,
    5.68810533258985340e-01,
    1.18659746455814993e-02,
    -1.06711693185739573e-01,
    2.38253786681433093e-02,
    1.70252294333047144e-02,
    -5.43945807460477233e-03,
    -4.55687917622708046e-03,
];

/// Modulate about the center tap: out[n] = (-1)^(n - center) * h[n],
/// then flip the global sign if the center tap came out negative.
fn modulated(h: &[f64], center: usize) -> Vec<f64> {
    let mut out: Vec<f64> = h
        .iter()
        .enumerate()
        .map(|(n, &v)| if (n as isize - center as isize) % 2 == 0 { v } else { -v })
        .collect();
    let anchor = out[center];
    if anchor < 0.0 {
        out.iter_mut().for_each(|v| *v = -*v);
    }
    out
}

fn reversed(h: &[f64]) -> Vec<f64> {
    h.iter().rev().copied().collect()
}

/// QMF highpass complement of an even-length orthonormal lowpass:
/// h1[n] = (-1)^n h0[L-1-n].
fn qmf_highpass(h0: &[f64]) -> Vec<f64> {
    let l = h0.len();
    (0..l)
        .map(|n| if n % 2 == 0 { h0[l - 1 - n] } else { -h0[l - 1 - n] })
        .collect()
}

/// One analysis/synthesis pair for a single tree.
#[derive(Debug, Clone)]
pub struct TreeFilters {
    pub analysis_low: Vec<f64>,
    pub analysis_high: Vec<f64>,
    pub synthesis_low: Vec<f64>,
    pub synthesis_high: Vec<f64>,
}

/// Full filter bank: level-1 pairs per tree plus the Q-shift pairs used at
/// levels >= 2.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub level1_tree_a: TreeFilters,
    pub level1_tree_b: TreeFilters,
    pub qshift_tree_a: TreeFilters,
    pub qshift_tree_b: TreeFilters,
}

impl Default for FilterBank {
    fn default() -> Self {
        let h0o = LEVEL1_ANALYSIS_LOW.to_vec();
        let g0o = LEVEL1_SYNTH_LOW.to_vec();
        let h1o = modulated(&g0o, 9);
        let g1o = modulated(&h0o, 6);
        let tree_a = TreeFilters {
            analysis_low: h0o,
            analysis_high: h1o,
            synthesis_low: g0o,
            synthesis_high: g1o,
        };
        // Tree B at level 1 is the same filter set delayed by one sample.
        let shift = |h: &[f64]| {
            let mut v = vec![0.0];
            v.extend_from_slice(h);
            v
        };
        let tree_b = TreeFilters {
            analysis_low: shift(&tree_a.analysis_low),
            analysis_high: shift(&tree_a.analysis_high),
            synthesis_low: shift(&tree_a.synthesis_low),
            synthesis_high: shift(&tree_a.synthesis_high),
        };
        let q_b_low = QSHIFT_LOW.to_vec();
        let q_a_low = reversed(&q_b_low);
        let qa = TreeFilters {
            analysis_high: qmf_highpass(&q_a_low),
            synthesis_low: reversed(&q_a_low),
            synthesis_high: reversed(&qmf_highpass(&q_a_low)),
            analysis_low: q_a_low,
        };
        let qb = TreeFilters {
            analysis_high: qmf_highpass(&q_b_low),
            synthesis_low: reversed(&q_b_low),
            synthesis_high: reversed(&qmf_highpass(&q_b_low)),
            analysis_low: q_b_low,
        };
        FilterBank {
            level1_tree_a: tree_a,
            level1_tree_b: tree_b,
            qshift_tree_a: qa,
            qshift_tree_b: qb,
        }
    }
}

/// Result of one filter bank validation condition.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Report from [`validate_filterbank`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, value: f64, tol: f64) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: value.abs() < tol,
        detail: format!("|{:.3e}| < {:.1e}", value, tol),
    }
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            out[i + j] += av * bv;
        }
    }
    out
}

// Group delay at low frequency via the phase slope of the DTFT.
fn group_delay(h: &[f64]) -> f64 {
    let w = 0.1;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &v) in h.iter().enumerate() {
        re += v * (w * n as f64).cos();
        im -= v * (w * n as f64).sin();
    }
    -im.atan2(re) / w
}

/// Check all FilterBank invariants; failures are reported, not raised.
pub fn validate_filterbank(fb: &FilterBank) -> ValidationReport {
    let mut checks = Vec::new();

    // Level 1: perfect reconstruction of a delta through the undecimated
    // two-band identity  h0*g0 + h1*g1 == delta.
    let t = &fb.level1_tree_a;
    let mut p = convolve(&t.analysis_low, &t.synthesis_low);
    let q = convolve(&t.analysis_high, &t.synthesis_high);
    // center taps: (13+19-2)/2 = 15 for both products
    for (i, v) in q.iter().enumerate() {
        p[i] += v;
    }
    let mut worst = 0.0f64;
    let center = (p.len() - 1) / 2;
    for (i, &v) in p.iter().enumerate() {
        let target = if i == center { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    checks.push(check("level1 perfect reconstruction (delta)", worst, 1e-10));

    // Q-shift: orthonormality (double-shift) implies PR for each tree.
    for (name, t) in [("treeA", &fb.qshift_tree_a), ("treeB", &fb.qshift_tree_b)] {
        let h = &t.analysis_low;
        let mut worst = 0.0f64;
        for k in 0..h.len() / 2 {
            let mut acc = 0.0;
            for n in 0..h.len() - 2 * k {
                acc += h[n] * h[n + 2 * k];
            }
            let target = if k == 0 { 1.0 } else { 0.0 };
            worst = worst.max((acc - target).abs());
        }
        checks.push(check(&format!("qshift {name} perfect reconstruction (orthonormality)"), worst, 1e-10));
    }

    // Zero DC gain of every highpass filter.
    for (name, h) in [
        ("level1 treeA", &fb.level1_tree_a.analysis_high),
        ("level1 treeB", &fb.level1_tree_b.analysis_high),
        ("qshift treeA", &fb.qshift_tree_a.analysis_high),
        ("qshift treeB", &fb.qshift_tree_b.analysis_high),
    ] {
        let dc: f64 = h.iter().sum();
        checks.push(check(&format!("{name} highpass zero DC gain"), dc, 1e-10));
    }

    // Level-1 tree B must be a one-sample translate of tree A.
    let a = &fb.level1_tree_a.analysis_low;
    let b = &fb.level1_tree_b.analysis_low;
    let translate_err = if b.len() == a.len() + 1 && b[0] == 0.0 {
        a.iter().zip(&b[1..]).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
    } else {
        f64::INFINITY
    };
    checks.push(check("level1 treeB is one-sample translate of treeA", translate_err, 1e-12));

    // Half-sample delay condition between the Q-shift trees.
    let da = group_delay(&fb.qshift_tree_a.analysis_low);
    let db = group_delay(&fb.qshift_tree_b.analysis_low);
    checks.push(check("qshift half-sample delay between trees", (da - db).abs() - 0.5, 0.05));

    ValidationReport { checks }
}
