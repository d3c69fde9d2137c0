//! 2-D dual-tree complex wavelet transform.
//!
//! Level 1 filters with the odd-length biorthogonal pair without decimation:
//! the lowpass stays at full resolution (the four tree-combination lowpass
//! sub-lattices interleaved), and the highpass images are repacked losslessly
//! into six oriented complex sub-bands at half resolution via the quad
//!-to-complex map. Levels >= 2 split the running lowpass into its four tree
//! sub-lattices and run one decimated orthogonal Q-shift stage per tree.
//!
//! Boundary handling is whole-point symmetric at level 1 and periodic at the
//! Q-shift levels; both choices keep the transform exactly invertible.

use super::filters::FilterBank;
use crate::error::{CoreError, Result};
use crate::tensor::{Scalar, Tensor};

/// Orientation labels of the six sub-bands, in storage order.
pub const ORIENTATIONS_DEG: [usize; 6] = [15, 45, 75, 105, 135, 165];

/// Output of [`dtcwt_forward`].
///
/// `highpass[j]` has shape (N, 2, 6, C, H/2^(j+1), W/2^(j+1)); axis 1 indexes
/// {real, imaginary}, axis 2 the orientations of [`ORIENTATIONS_DEG`].
/// `lowpass` is (N, C, H/2^(M-1), W/2^(M-1)), the four tree lowpass
/// sub-lattices interleaved.
#[derive(Debug, Clone)]
pub struct Subbands<T> {
    pub lowpass: Tensor<T>,
    pub highpass: Vec<Tensor<T>>,
    /// Input size before the internal pad-to-even, restored by the inverse.
    pub original_hw: (usize, usize),
}

impl<T: Scalar> Subbands<T> {
    pub fn levels(&self) -> usize {
        self.highpass.len()
    }

    pub fn total_elements(&self) -> usize {
        self.lowpass.numel() + self.highpass.iter().map(|t| t.numel()).sum::<usize>()
    }
}

fn sym_idx(n: isize, len: usize) -> usize {
    // whole-point symmetric reflection: ... 2 1 | 0 1 2 ... L-1 | L-2 ...
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = n.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Zero-phase filtering along the width axis with symmetric extension.
fn filt_h<T: Scalar>(src: &[T], h: &[T], center: usize, hgt: usize, wid: usize, dst: &mut [T]) {
    for i in 0..hgt {
        let row = &src[i * wid..(i + 1) * wid];
        let out = &mut dst[i * wid..(i + 1) * wid];
        for j in 0..wid {
            let mut acc = T::zero();
            for (k, &hv) in h.iter().enumerate() {
                let s = sym_idx(j as isize + center as isize - k as isize, wid);
                acc += hv * row[s];
            }
            out[j] = acc;
        }
    }
}

/// Adjoint of [`filt_h`].
fn filt_h_adj<T: Scalar>(src: &[T], h: &[T], center: usize, hgt: usize, wid: usize, dst: &mut [T]) {
    for i in 0..hgt {
        let row = &src[i * wid..(i + 1) * wid];
        let out = &mut dst[i * wid..(i + 1) * wid];
        out.iter_mut().for_each(|v| *v = T::zero());
        for j in 0..wid {
            let g = row[j];
            for (k, &hv) in h.iter().enumerate() {
                let s = sym_idx(j as isize + center as isize - k as isize, wid);
                out[s] += hv * g;
            }
        }
    }
}

fn transpose<T: Scalar>(src: &[T], hgt: usize, wid: usize, dst: &mut [T]) {
    for i in 0..hgt {
        for j in 0..wid {
            dst[j * hgt + i] = src[i * wid + j];
        }
    }
}

struct PlaneOps<T> {
    scratch_a: Vec<T>,
    scratch_b: Vec<T>,
}

impl<T: Scalar> PlaneOps<T> {
    fn new(cap: usize) -> Self {
        PlaneOps { scratch_a: vec![T::zero(); cap], scratch_b: vec![T::zero(); cap] }
    }

    fn filt_v(&mut self, src: &[T], h: &[T], center: usize, hgt: usize, wid: usize, dst: &mut [T], adjoint: bool) {
        let n = hgt * wid;
        transpose(src, hgt, wid, &mut self.scratch_a[..n]);
        if adjoint {
            filt_h_adj(&self.scratch_a[..n], h, center, wid, hgt, &mut self.scratch_b[..n]);
        } else {
            filt_h(&self.scratch_a[..n], h, center, wid, hgt, &mut self.scratch_b[..n]);
        }
        transpose(&self.scratch_b[..n], wid, hgt, dst);
    }
}

fn to_t<T: Scalar>(h: &[f64]) -> Vec<T> {
    h.iter().map(|&v| T::from_f64(v)).collect()
}

// Level-1 filter set in working precision, tree A (tree B is its one-sample
// translate, realized implicitly by the polyphase split).
struct Level1<T> {
    h0: Vec<T>,
    h1: Vec<T>,
    g0: Vec<T>,
    g1: Vec<T>,
    c_h0: usize,
    c_h1: usize,
}

impl<T: Scalar> Level1<T> {
    fn new(fb: &FilterBank) -> Self {
        let t = &fb.level1_tree_a;
        Level1 {
            h0: to_t(&t.analysis_low),
            h1: to_t(&t.analysis_high),
            g0: to_t(&t.synthesis_low),
            g1: to_t(&t.synthesis_high),
            c_h0: (t.analysis_low.len() - 1) / 2,
            c_h1: (t.analysis_high.len() - 1) / 2,
        }
    }
}

/// Combine four co-located sub-lattices into two oriented complex sub-bands.
///
/// The map is orthonormal: z1 = ((p - s) + i(q + r))/sqrt(2),
/// z2 = ((p + s) + i(q - r))/sqrt(2).
pub fn quad_to_complex<T: Scalar>(
    p: &Tensor<T>,
    q: &Tensor<T>,
    r: &Tensor<T>,
    s: &Tensor<T>,
) -> Result<[Tensor<T>; 4]> {
    if p.shape() != q.shape() || p.shape() != r.shape() || p.shape() != s.shape() {
        return Err(CoreError::shape("quad_to_complex: lattice shapes differ"));
    }
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let mut z1re = Tensor::zeros(p.shape());
    let mut z1im = Tensor::zeros(p.shape());
    let mut z2re = Tensor::zeros(p.shape());
    let mut z2im = Tensor::zeros(p.shape());
    for i in 0..p.numel() {
        let (pv, qv, rv, sv) = (p.data()[i], q.data()[i], r.data()[i], s.data()[i]);
        z1re.data_mut()[i] = (pv - sv) * inv_sqrt2;
        z1im.data_mut()[i] = (qv + rv) * inv_sqrt2;
        z2re.data_mut()[i] = (pv + sv) * inv_sqrt2;
        z2im.data_mut()[i] = (qv - rv) * inv_sqrt2;
    }
    Ok([z1re, z1im, z2re, z2im])
}

/// Exact inverse of [`quad_to_complex`].
pub fn complex_to_quad<T: Scalar>(z: &[Tensor<T>; 4]) -> [Tensor<T>; 4] {
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let [z1re, z1im, z2re, z2im] = z;
    let mut p = Tensor::zeros(z1re.shape());
    let mut q = Tensor::zeros(z1re.shape());
    let mut r = Tensor::zeros(z1re.shape());
    let mut s = Tensor::zeros(z1re.shape());
    for i in 0..z1re.numel() {
        p.data_mut()[i] = (z1re.data()[i] + z2re.data()[i]) * inv_sqrt2;
        s.data_mut()[i] = (z2re.data()[i] - z1re.data()[i]) * inv_sqrt2;
        q.data_mut()[i] = (z1im.data()[i] + z2im.data()[i]) * inv_sqrt2;
        r.data_mut()[i] = (z1im.data()[i] - z2im.data()[i]) * inv_sqrt2;
    }
    [p, q, r, s]
}

// Plane-level quad split/merge used inside the transform.
fn quad_split<T: Scalar>(src: &[T], hgt: usize, wid: usize) -> [Vec<T>; 4] {
    let (h2, w2) = (hgt / 2, wid / 2);
    let mut out = [
        vec![T::zero(); h2 * w2],
        vec![T::zero(); h2 * w2],
        vec![T::zero(); h2 * w2],
        vec![T::zero(); h2 * w2],
    ];
    for i in 0..h2 {
        for j in 0..w2 {
            out[0][i * w2 + j] = src[2 * i * wid + 2 * j];
            out[1][i * w2 + j] = src[2 * i * wid + 2 * j + 1];
            out[2][i * w2 + j] = src[(2 * i + 1) * wid + 2 * j];
            out[3][i * w2 + j] = src[(2 * i + 1) * wid + 2 * j + 1];
        }
    }
    out
}

fn quad_merge<T: Scalar>(parts: &[Vec<T>; 4], hgt: usize, wid: usize, dst: &mut [T]) {
    let (h2, w2) = (hgt / 2, wid / 2);
    for i in 0..h2 {
        for j in 0..w2 {
            dst[2 * i * wid + 2 * j] = parts[0][i * w2 + j];
            dst[2 * i * wid + 2 * j + 1] = parts[1][i * w2 + j];
            dst[(2 * i + 1) * wid + 2 * j] = parts[2][i * w2 + j];
            dst[(2 * i + 1) * wid + 2 * j + 1] = parts[3][i * w2 + j];
        }
    }
}

// forward quad -> (z1re,z1im,z2re,z2im) on raw plane buffers
fn q2c_plane<T: Scalar>(parts: &[Vec<T>; 4]) -> [Vec<T>; 4] {
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let n = parts[0].len();
    let mut out = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
    for i in 0..n {
        let (a, b, c, d) = (parts[0][i], parts[1][i], parts[2][i], parts[3][i]);
        out[0][i] = (a - d) * inv_sqrt2;
        out[1][i] = (b + c) * inv_sqrt2;
        out[2][i] = (a + d) * inv_sqrt2;
        out[3][i] = (b - c) * inv_sqrt2;
    }
    out
}

fn c2q_plane<T: Scalar>(z: &[Vec<T>; 4]) -> [Vec<T>; 4] {
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let n = z[0].len();
    let mut out = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
    for i in 0..n {
        out[0][i] = (z[0][i] + z[2][i]) * inv_sqrt2;
        out[3][i] = (z[2][i] - z[0][i]) * inv_sqrt2;
        out[1][i] = (z[1][i] + z[3][i]) * inv_sqrt2;
        out[2][i] = (z[1][i] - z[3][i]) * inv_sqrt2;
    }
    out
}

// Circular 2-band decimated filtering along the width axis (one Q-shift
// tree). `adjoint = true` computes the exact transpose, which by
// orthonormality is also the synthesis.
fn circ_decim_h<T: Scalar>(src: &[T], h: &[T], hgt: usize, wid: usize, dst: &mut [T]) {
    let w2 = wid / 2;
    for i in 0..hgt {
        let row = &src[i * wid..(i + 1) * wid];
        let out = &mut dst[i * w2..(i + 1) * w2];
        for n in 0..w2 {
            let mut acc = T::zero();
            for (k, &hv) in h.iter().enumerate() {
                let idx = (2 * n as isize - k as isize).rem_euclid(wid as isize) as usize;
                acc += hv * row[idx];
            }
            out[n] = acc;
        }
    }
}

fn circ_expand_h<T: Scalar>(src: &[T], h: &[T], hgt: usize, wid: usize, dst: &mut [T]) {
    let w2 = wid / 2;
    for i in 0..hgt {
        let row = &src[i * w2..(i + 1) * w2];
        let out = &mut dst[i * wid..(i + 1) * wid];
        for n in 0..w2 {
            let g = row[n];
            for (k, &hv) in h.iter().enumerate() {
                let idx = (2 * n as isize - k as isize).rem_euclid(wid as isize) as usize;
                out[idx] += hv * g;
            }
        }
    }
}

struct QshiftFilters<T> {
    low: [Vec<T>; 2],  // indexed by tree
    high: [Vec<T>; 2],
}

impl<T: Scalar> QshiftFilters<T> {
    fn new(fb: &FilterBank) -> Self {
        QshiftFilters {
            low: [to_t(&fb.qshift_tree_a.analysis_low), to_t(&fb.qshift_tree_b.analysis_low)],
            high: [to_t(&fb.qshift_tree_a.analysis_high), to_t(&fb.qshift_tree_b.analysis_high)],
        }
    }
}

fn pad_to_even<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (hp, wp) = (h + h % 2, w + w % 2);
    if (hp, wp) == (h, w) {
        return Ok(x.clone());
    }
    let mut y = Tensor::zeros(&[n, c, hp, wp]);
    for bc in 0..n * c {
        let src = &x.data()[bc * h * w..(bc + 1) * h * w];
        let dst = &mut y.data_mut()[bc * hp * wp..(bc + 1) * hp * wp];
        for i in 0..hp {
            let si = sym_idx(i as isize, h);
            for j in 0..wp {
                dst[i * wp + j] = src[si * w + sym_idx(j as isize, w)];
            }
        }
    }
    Ok(y)
}

fn crop<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, c, hp, wp) = x.dims4()?;
    if (hp, wp) == (h, w) {
        return Ok(x.clone());
    }
    let mut y = Tensor::zeros(&[n, c, h, w]);
    for bc in 0..n * c {
        let src = &x.data()[bc * hp * wp..(bc + 1) * hp * wp];
        let dst = &mut y.data_mut()[bc * h * w..(bc + 1) * h * w];
        for i in 0..h {
            dst[i * w..(i + 1) * w].copy_from_slice(&src[i * wp..i * wp + w]);
        }
    }
    Ok(y)
}

// Storage helpers: highpass tensor (N,2,6,C,H2,W2).
fn band_slice_mut<T: Scalar>(
    hp: &mut Tensor<T>,
    b: usize,
    reim: usize,
    orient: usize,
    ch: usize,
) -> &mut [T] {
    let sh = hp.shape();
    let (c, h2, w2) = (sh[3], sh[4], sh[5]);
    let plane = h2 * w2;
    let idx = (((b * 2 + reim) * 6 + orient) * c + ch) * plane;
    &mut hp.data_mut()[idx..idx + plane]
}

fn band_slice<T: Scalar>(hp: &Tensor<T>, b: usize, reim: usize, orient: usize, ch: usize) -> &[T] {
    let sh = hp.shape();
    let (c, h2, w2) = (sh[3], sh[4], sh[5]);
    let plane = h2 * w2;
    let idx = (((b * 2 + reim) * 6 + orient) * c + ch) * plane;
    &hp.data()[idx..idx + plane]
}

// Band order: index of (v-filter, h-filter, z) in ORIENTATIONS_DEG.
// (lo,hi) -> z1: 15, z2: 165; (hi,hi) -> z1: 45, z2: 135; (hi,lo) -> z1: 75, z2: 105.
const BAND_OF: [[usize; 2]; 3] = [[0, 5], [1, 4], [2, 3]]; // rows: LoHi, HiHi, HiLo

/// Forward 2-D DTCWT with `levels >= 1`.
pub fn dtcwt_forward<T: Scalar>(x: &Tensor<T>, levels: usize, fb: &FilterBank) -> Result<Subbands<T>> {
    let (n, c, h0, w0) = x.dims4()?;
    if levels < 1 {
        return Err(CoreError::InvalidArgument("levels must be >= 1".into()));
    }
    let xp = pad_to_even(x)?;
    let (_, _, h, w) = xp.dims4()?;
    if h % (1 << levels) != 0 || w % (1 << levels) != 0 || h >> levels == 0 || w >> levels == 0 {
        return Err(CoreError::InvalidArgument(format!(
            "{} levels too large for spatial size ({h},{w})",
            levels
        )));
    }
    let l1 = Level1::<T>::new(fb);
    let qf = QshiftFilters::<T>::new(fb);
    let mut ops = PlaneOps::new(h * w);

    let mut lowpass = Tensor::zeros(&[n, c, h >> (levels - 1), w >> (levels - 1)]);
    let mut highpass: Vec<Tensor<T>> = (0..levels)
        .map(|j| Tensor::zeros(&[n, 2, 6, c, h >> (j + 1), w >> (j + 1)]))
        .collect();

    let mut lo = vec![T::zero(); h * w];
    let mut hi = vec![T::zero(); h * w];
    let mut tmp = vec![T::zero(); h * w];

    for b in 0..n {
        for ch in 0..c {
            let plane = &xp.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            // level 1, undecimated
            ops.filt_v(plane, &l1.h0, l1.c_h0, h, w, &mut lo, false);
            ops.filt_v(plane, &l1.h1, l1.c_h1, h, w, &mut hi, false);
            // lowpass branch
            filt_h(&lo, &l1.h0, l1.c_h0, h, w, &mut tmp);
            let lolo = tmp.clone();
            // three highpass images -> six oriented bands
            for (row, (src_v, hfilt, hcent)) in [
                (&lo, &l1.h1, l1.c_h1), // LoHi
                (&hi, &l1.h1, l1.c_h1), // HiHi
                (&hi, &l1.h0, l1.c_h0), // HiLo
            ]
            .into_iter()
            .enumerate()
            {
                filt_h(src_v, hfilt, hcent, h, w, &mut tmp);
                let quads = quad_split(&tmp, h, w);
                let z = q2c_plane(&quads);
                let [o1, o2] = BAND_OF[row];
                band_slice_mut(&mut highpass[0], b, 0, o1, ch).copy_from_slice(&z[0]);
                band_slice_mut(&mut highpass[0], b, 1, o1, ch).copy_from_slice(&z[1]);
                band_slice_mut(&mut highpass[0], b, 0, o2, ch).copy_from_slice(&z[2]);
                band_slice_mut(&mut highpass[0], b, 1, o2, ch).copy_from_slice(&z[3]);
            }
            // Q-shift levels
            let mut cur = lolo;
            let (mut ch_h, mut ch_w) = (h, w);
            for lev in 1..levels {
                let (h2, w2) = (ch_h / 2, ch_w / 2);
                let sub = quad_split(&cur, ch_h, ch_w); // [aa, ab, ba, bb] by (row,col) phase
                let mut ll_parts: [Vec<T>; 4] = Default::default();
                let mut band_parts: [[Vec<T>; 4]; 3] = Default::default();
                for (qi, lattice) in sub.iter().enumerate() {
                    let (tv, th) = (qi / 2, qi % 2); // vertical tree, horizontal tree
                    let mut lv = vec![T::zero(); (h2 / 2) * w2];
                    let mut hv = vec![T::zero(); (h2 / 2) * w2];
                    // vertical (rows) decimation via transpose
                    let mut tr = vec![T::zero(); h2 * w2];
                    transpose(lattice, h2, w2, &mut tr);
                    let mut lv_t = vec![T::zero(); w2 * (h2 / 2)];
                    let mut hv_t = vec![T::zero(); w2 * (h2 / 2)];
                    circ_decim_h(&tr, &qf.low[tv], w2, h2, &mut lv_t);
                    circ_decim_h(&tr, &qf.high[tv], w2, h2, &mut hv_t);
                    transpose(&lv_t, w2, h2 / 2, &mut lv);
                    transpose(&hv_t, w2, h2 / 2, &mut hv);
                    // horizontal decimation
                    let nquarter = (h2 / 2) * (w2 / 2);
                    let mut ll = vec![T::zero(); nquarter];
                    let mut lh = vec![T::zero(); nquarter];
                    let mut hl = vec![T::zero(); nquarter];
                    let mut hh = vec![T::zero(); nquarter];
                    circ_decim_h(&lv, &qf.low[th], h2 / 2, w2, &mut ll);
                    circ_decim_h(&lv, &qf.high[th], h2 / 2, w2, &mut lh);
                    circ_decim_h(&hv, &qf.low[th], h2 / 2, w2, &mut hl);
                    circ_decim_h(&hv, &qf.high[th], h2 / 2, w2, &mut hh);
                    ll_parts[qi] = ll;
                    band_parts[0][qi] = lh; // v-low, h-high
                    band_parts[1][qi] = hh;
                    band_parts[2][qi] = hl;
                }
                for (row, parts) in band_parts.iter().enumerate() {
                    let z = q2c_plane(parts);
                    let [o1, o2] = BAND_OF[row];
                    band_slice_mut(&mut highpass[lev], b, 0, o1, ch).copy_from_slice(&z[0]);
                    band_slice_mut(&mut highpass[lev], b, 1, o1, ch).copy_from_slice(&z[1]);
                    band_slice_mut(&mut highpass[lev], b, 0, o2, ch).copy_from_slice(&z[2]);
                    band_slice_mut(&mut highpass[lev], b, 1, o2, ch).copy_from_slice(&z[3]);
                }
                let mut next = vec![T::zero(); h2 * w2];
                quad_merge(&ll_parts, h2, w2, &mut next);
                cur = next;
                ch_h = h2;
                ch_w = w2;
            }
            lowpass.data_mut()[(b * c + ch) * ch_h * ch_w..(b * c + ch + 1) * ch_h * ch_w]
                .copy_from_slice(&cur);
        }
    }
    Ok(Subbands { lowpass, highpass, original_hw: (h0, w0) })
}

fn check_subband_shapes<T: Scalar>(s: &Subbands<T>) -> Result<(usize, usize, usize, usize)> {
    let (n, c, lh, lw) = s.lowpass.dims4()?;
    let m = s.highpass.len();
    if m == 0 {
        return Err(CoreError::shape("subbands must have >= 1 highpass level"));
    }
    let (h, w) = (lh << (m - 1), lw << (m - 1));
    for (j, t) in s.highpass.iter().enumerate() {
        let expect = [n, 2, 6, c, h >> (j + 1), w >> (j + 1)];
        if t.shape() != expect {
            return Err(CoreError::shape(format!(
                "highpass level {} has shape {:?}, expected {:?}",
                j,
                t.shape(),
                expect
            )));
        }
    }
    Ok((n, c, h, w))
}

/// Exact inverse of [`dtcwt_forward`] (up to floating-point round-off).
pub fn dtcwt_inverse<T: Scalar>(s: &Subbands<T>, fb: &FilterBank) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_subband_shapes(s)?;
    let levels = s.highpass.len();
    let l1 = Level1::<T>::new(fb);
    let qf = QshiftFilters::<T>::new(fb);
    let mut ops = PlaneOps::new(h * w);
    let mut out = Tensor::zeros(&[n, c, h, w]);

    let mut tmp = vec![T::zero(); h * w];
    for b in 0..n {
        for ch in 0..c {
            // ascend from the coarsest lowpass through the Q-shift levels
            let (mut ch_h, mut ch_w) = (h >> (levels - 1), w >> (levels - 1));
            let mut cur =
                s.lowpass.data()[(b * c + ch) * ch_h * ch_w..(b * c + ch + 1) * ch_h * ch_w].to_vec();
            for lev in (1..levels).rev() {
                let (h2, w2) = (ch_h, ch_w); // interleaved size at this level's input
                let mut band_parts: [[Vec<T>; 4]; 3] = Default::default();
                for (row, _) in BAND_OF.iter().enumerate() {
                    let [o1, o2] = BAND_OF[row];
                    let z = [
                        band_slice(&s.highpass[lev], b, 0, o1, ch).to_vec(),
                        band_slice(&s.highpass[lev], b, 1, o1, ch).to_vec(),
                        band_slice(&s.highpass[lev], b, 0, o2, ch).to_vec(),
                        band_slice(&s.highpass[lev], b, 1, o2, ch).to_vec(),
                    ];
                    band_parts[row] = c2q_plane(&z);
                }
                let ll_parts = quad_split(&cur, h2, w2);
                let mut rec_parts: [Vec<T>; 4] = Default::default();
                for qi in 0..4 {
                    let (tv, th) = (qi / 2, qi % 2);
                    // undo horizontal decimation
                    let mut lv = vec![T::zero(); (h2 / 2) * w2];
                    let mut hv = vec![T::zero(); (h2 / 2) * w2];
                    circ_expand_h(&ll_parts[qi], &qf.low[th], h2 / 2, w2, &mut lv);
                    circ_expand_h(&band_parts[0][qi], &qf.high[th], h2 / 2, w2, &mut lv);
                    circ_expand_h(&band_parts[2][qi], &qf.low[th], h2 / 2, w2, &mut hv);
                    circ_expand_h(&band_parts[1][qi], &qf.high[th], h2 / 2, w2, &mut hv);
                    // undo vertical decimation via transpose
                    let mut lv_t = vec![T::zero(); w2 * (h2 / 2)];
                    let mut hv_t = vec![T::zero(); w2 * (h2 / 2)];
                    transpose(&lv, h2 / 2, w2, &mut lv_t);
                    transpose(&hv, h2 / 2, w2, &mut hv_t);
                    let mut rec_t = vec![T::zero(); w2 * h2];
                    circ_expand_h(&lv_t, &qf.low[tv], w2, h2, &mut rec_t);
                    circ_expand_h(&hv_t, &qf.high[tv], w2, h2, &mut rec_t);
                    let mut rec = vec![T::zero(); h2 * w2];
                    transpose(&rec_t, w2, h2, &mut rec);
                    rec_parts[qi] = rec;
                }
                let mut next = vec![T::zero(); 4 * h2 * w2];
                quad_merge(&rec_parts, 2 * h2, 2 * w2, &mut next);
                cur = next;
                ch_h *= 2;
                ch_w *= 2;
            }
            debug_assert_eq!((ch_h, ch_w), (h, w));
            // level-1 synthesis
            let mut y_lo = vec![T::zero(); h * w];
            let mut y_hi = vec![T::zero(); h * w];
            filt_h(&cur, &l1.g0, (l1.g0.len() - 1) / 2, h, w, &mut y_lo);
            for (row, (is_hi_v, hfilt)) in [
                (false, &l1.g1), // LoHi enters the v-low branch with g1 rows
                (true, &l1.g1),  // HiHi
                (true, &l1.g0),  // HiLo
            ]
            .into_iter()
            .enumerate()
            {
                let [o1, o2] = BAND_OF[row];
                let z = [
                    band_slice(&s.highpass[0], b, 0, o1, ch).to_vec(),
                    band_slice(&s.highpass[0], b, 1, o1, ch).to_vec(),
                    band_slice(&s.highpass[0], b, 0, o2, ch).to_vec(),
                    band_slice(&s.highpass[0], b, 1, o2, ch).to_vec(),
                ];
                let quads = c2q_plane(&z);
                let mut full = vec![T::zero(); h * w];
                quad_merge(&quads, h, w, &mut full);
                filt_h(&full, hfilt, (hfilt.len() - 1) / 2, h, w, &mut tmp);
                let dst = if is_hi_v { &mut y_hi } else { &mut y_lo };
                dst.iter_mut().zip(&tmp).for_each(|(a, &v)| *a += v);
            }
            let mut rec = vec![T::zero(); h * w];
            ops.filt_v(&y_lo, &l1.g0, (l1.g0.len() - 1) / 2, h, w, &mut rec, false);
            ops.filt_v(&y_hi, &l1.g1, (l1.g1.len() - 1) / 2, h, w, &mut tmp, false);
            rec.iter_mut().zip(&tmp).for_each(|(a, &v)| *a += v);
            out.data_mut()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].copy_from_slice(&rec);
        }
    }
    crop(&out, s.original_hw.0, s.original_hw.1)
}

/// Adjoint (transpose) of the forward transform as a linear operator:
/// maps a cotangent on the sub-bands to a cotangent on the input image.
pub fn dtcwt_forward_adjoint<T: Scalar>(grad: &Subbands<T>, fb: &FilterBank) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_subband_shapes(grad)?;
    let levels = grad.highpass.len();
    let l1 = Level1::<T>::new(fb);
    let qf = QshiftFilters::<T>::new(fb);
    let mut ops = PlaneOps::new(h * w);
    let mut out = Tensor::zeros(&[n, c, h, w]);
    let mut tmp = vec![T::zero(); h * w];

    for b in 0..n {
        for ch in 0..c {
            // adjoint of the Q-shift chain: descend is analysis, so its
            // transpose ascends with circ_expand (which IS the transpose).
            let (mut ch_h, mut ch_w) = (h >> (levels - 1), w >> (levels - 1));
            let mut cur =
                grad.lowpass.data()[(b * c + ch) * ch_h * ch_w..(b * c + ch + 1) * ch_h * ch_w].to_vec();
            for lev in (1..levels).rev() {
                let (h2, w2) = (ch_h, ch_w);
                let mut band_parts: [[Vec<T>; 4]; 3] = Default::default();
                for row in 0..3 {
                    let [o1, o2] = BAND_OF[row];
                    let z = [
                        band_slice(&grad.highpass[lev], b, 0, o1, ch).to_vec(),
                        band_slice(&grad.highpass[lev], b, 1, o1, ch).to_vec(),
                        band_slice(&grad.highpass[lev], b, 0, o2, ch).to_vec(),
                        band_slice(&grad.highpass[lev], b, 1, o2, ch).to_vec(),
                    ];
                    // adjoint of q2c is c2q (orthonormal)
                    band_parts[row] = c2q_plane(&z);
                }
                let ll_parts = quad_split(&cur, h2, w2);
                let mut rec_parts: [Vec<T>; 4] = Default::default();
                for qi in 0..4 {
                    let (tv, th) = (qi / 2, qi % 2);
                    let mut lv = vec![T::zero(); (h2 / 2) * w2];
                    let mut hv = vec![T::zero(); (h2 / 2) * w2];
                    circ_expand_h(&ll_parts[qi], &qf.low[th], h2 / 2, w2, &mut lv);
                    circ_expand_h(&band_parts[0][qi], &qf.high[th], h2 / 2, w2, &mut lv);
                    circ_expand_h(&band_parts[2][qi], &qf.low[th], h2 / 2, w2, &mut hv);
                    circ_expand_h(&band_parts[1][qi], &qf.high[th], h2 / 2, w2, &mut hv);
                    let mut lv_t = vec![T::zero(); w2 * (h2 / 2)];
                    let mut hv_t = vec![T::zero(); w2 * (h2 / 2)];
                    transpose(&lv, h2 / 2, w2, &mut lv_t);
                    transpose(&hv, h2 / 2, w2, &mut hv_t);
                    let mut rec_t = vec![T::zero(); w2 * h2];
                    circ_expand_h(&lv_t, &qf.low[tv], w2, h2, &mut rec_t);
                    circ_expand_h(&hv_t, &qf.high[tv], w2, h2, &mut rec_t);
                    let mut rec = vec![T::zero(); h2 * w2];
                    transpose(&rec_t, w2, h2, &mut rec);
                    rec_parts[qi] = rec;
                }
                let mut next = vec![T::zero(); 4 * h2 * w2];
                quad_merge(&rec_parts, 2 * h2, 2 * w2, &mut next);
                cur = next;
                ch_h *= 2;
                ch_w *= 2;
            }
            // adjoint of the level-1 analysis: transpose filtering with the
            // analysis filters.
            let mut y_lo = vec![T::zero(); h * w];
            let mut y_hi = vec![T::zero(); h * w];
            filt_h_adj(&cur, &l1.h0, l1.c_h0, h, w, &mut y_lo);
            for (row, (is_hi_v, hfilt, hcent)) in [
                (false, &l1.h1, l1.c_h1),
                (true, &l1.h1, l1.c_h1),
                (true, &l1.h0, l1.c_h0),
            ]
            .into_iter()
            .enumerate()
            {
                let [o1, o2] = BAND_OF[row];
                let z = [
                    band_slice(&grad.highpass[0], b, 0, o1, ch).to_vec(),
                    band_slice(&grad.highpass[0], b, 1, o1, ch).to_vec(),
                    band_slice(&grad.highpass[0], b, 0, o2, ch).to_vec(),
                    band_slice(&grad.highpass[0], b, 1, o2, ch).to_vec(),
                ];
                let quads = c2q_plane(&z);
                let mut full = vec![T::zero(); h * w];
                quad_merge(&quads, h, w, &mut full);
                filt_h_adj(&full, hfilt, hcent, h, w, &mut tmp);
                let dst = if is_hi_v { &mut y_hi } else { &mut y_lo };
                dst.iter_mut().zip(&tmp).for_each(|(a, &v)| *a += v);
            }
            let mut rec = vec![T::zero(); h * w];
            ops.filt_v(&y_lo, &l1.h0, l1.c_h0, h, w, &mut rec, true);
            ops.filt_v(&y_hi, &l1.h1, l1.c_h1, h, w, &mut tmp, true);
            rec.iter_mut().zip(&tmp).for_each(|(a, &v)| *a += v);
            out.data_mut()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].copy_from_slice(&rec);
        }
    }
    // adjoint of pad-to-even would fold padded rows back; the transform only
    // pads odd inputs, which the network never produces, so reject instead.
    if grad.original_hw != (h, w) {
        return Err(CoreError::InvalidArgument(
            "adjoint of the odd-size padding path is not supported".into(),
        ));
    }
    Ok(out)
}

/// Adjoint (transpose) of [`dtcwt_inverse`] as a linear operator: maps a
/// cotangent on the reconstructed image to a cotangent on the sub-bands.
pub fn dtcwt_inverse_adjoint<T: Scalar>(
    grad_x: &Tensor<T>,
    levels: usize,
    fb: &FilterBank,
) -> Result<Subbands<T>> {
    let (n, c, h, w) = grad_x.dims4()?;
    if h % (1 << levels) != 0 || w % (1 << levels) != 0 {
        return Err(CoreError::shape("inverse adjoint: size not divisible by 2^levels"));
    }
    let l1 = Level1::<T>::new(fb);
    let qf = QshiftFilters::<T>::new(fb);
    let mut ops = PlaneOps::new(h * w);

    let mut lowpass = Tensor::zeros(&[n, c, h >> (levels - 1), w >> (levels - 1)]);
    let mut highpass: Vec<Tensor<T>> = (0..levels)
        .map(|j| Tensor::zeros(&[n, 2, 6, c, h >> (j + 1), w >> (j + 1)]))
        .collect();
    let mut tmp = vec![T::zero(); h * w];

    for b in 0..n {
        for ch in 0..c {
            let plane = &grad_x.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            // adjoint of level-1 synthesis: filter the cotangent with the
            // synthesis filters (transposed) and split into band cotangents.
            let mut y_lo = vec![T::zero(); h * w];
            let mut y_hi = vec![T::zero(); h * w];
            ops.filt_v(plane, &l1.g0, (l1.g0.len() - 1) / 2, h, w, &mut y_lo, true);
            ops.filt_v(plane, &l1.g1, (l1.g1.len() - 1) / 2, h, w, &mut y_hi, true);
            filt_h_adj(&y_lo, &l1.g0, (l1.g0.len() - 1) / 2, h, w, &mut tmp);
            let mut cur = tmp.clone(); // cotangent on LoLo
            for (row, (src_v, hfilt)) in
                [(&y_lo, &l1.g1), (&y_hi, &l1.g1), (&y_hi, &l1.g0)].into_iter().enumerate()
            {
                filt_h_adj(src_v, hfilt, (hfilt.len() - 1) / 2, h, w, &mut tmp);
                let quads = quad_split(&tmp, h, w);
                let z = q2c_plane(&quads); // adjoint of c2q
                let [o1, o2] = BAND_OF[row];
                band_slice_mut(&mut highpass[0], b, 0, o1, ch).copy_from_slice(&z[0]);
                band_slice_mut(&mut highpass[0], b, 1, o1, ch).copy_from_slice(&z[1]);
                band_slice_mut(&mut highpass[0], b, 0, o2, ch).copy_from_slice(&z[2]);
                band_slice_mut(&mut highpass[0], b, 1, o2, ch).copy_from_slice(&z[3]);
            }
            // adjoint of each Q-shift synthesis stage = that stage's analysis
            let (mut ch_h, mut ch_w) = (h, w);
            for lev in 1..levels {
                let (h2, w2) = (ch_h / 2, ch_w / 2);
                let sub = quad_split(&cur, ch_h, ch_w);
                let mut ll_parts: [Vec<T>; 4] = Default::default();
                let mut band_parts: [[Vec<T>; 4]; 3] = Default::default();
                for (qi, lattice) in sub.iter().enumerate() {
                    let (tv, th) = (qi / 2, qi % 2);
                    let mut tr = vec![T::zero(); h2 * w2];
                    transpose(lattice, h2, w2, &mut tr);
                    let mut lv_t = vec![T::zero(); w2 * (h2 / 2)];
                    let mut hv_t = vec![T::zero(); w2 * (h2 / 2)];
                    circ_decim_h(&tr, &qf.low[tv], w2, h2, &mut lv_t);
                    circ_decim_h(&tr, &qf.high[tv], w2, h2, &mut hv_t);
                    let mut lv = vec![T::zero(); (h2 / 2) * w2];
                    let mut hv = vec![T::zero(); (h2 / 2) * w2];
                    transpose(&lv_t, w2, h2 / 2, &mut lv);
                    transpose(&hv_t, w2, h2 / 2, &mut hv);
                    let nq = (h2 / 2) * (w2 / 2);
                    let (mut ll, mut lh, mut hl, mut hh) =
                        (vec![T::zero(); nq], vec![T::zero(); nq], vec![T::zero(); nq], vec![T::zero(); nq]);
                    circ_decim_h(&lv, &qf.low[th], h2 / 2, w2, &mut ll);
                    circ_decim_h(&lv, &qf.high[th], h2 / 2, w2, &mut lh);
                    circ_decim_h(&hv, &qf.low[th], h2 / 2, w2, &mut hl);
                    circ_decim_h(&hv, &qf.high[th], h2 / 2, w2, &mut hh);
                    ll_parts[qi] = ll;
                    band_parts[0][qi] = lh;
                    band_parts[1][qi] = hh;
                    band_parts[2][qi] = hl;
                }
                for (row, parts) in band_parts.iter().enumerate() {
                    let z = q2c_plane(parts);
                    let [o1, o2] = BAND_OF[row];
                    band_slice_mut(&mut highpass[lev], b, 0, o1, ch).copy_from_slice(&z[0]);
                    band_slice_mut(&mut highpass[lev], b, 1, o1, ch).copy_from_slice(&z[1]);
                    band_slice_mut(&mut highpass[lev], b, 0, o2, ch).copy_from_slice(&z[2]);
                    band_slice_mut(&mut highpass[lev], b, 1, o2, ch).copy_from_slice(&z[3]);
                }
                let mut next = vec![T::zero(); h2 * w2];
                quad_merge(&ll_parts, h2, w2, &mut next);
                cur = next;
                ch_h = h2;
                ch_w = w2;
            }
            lowpass.data_mut()[(b * c + ch) * ch_h * ch_w..(b * c + ch + 1) * ch_h * ch_w]
                .copy_from_slice(&cur);
        }
    }
    Ok(Subbands { lowpass, highpass, original_hw: (h, w) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_subbands(like: &Subbands<f64>, seed: u64) -> Subbands<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &Tensor<f64>| {
            Tensor::from_vec(
                t.shape(),
                (0..t.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        Subbands {
            lowpass: fill(&like.lowpass),
            highpass: like.highpass.iter().map(&mut fill).collect(),
            original_hw: like.original_hw,
        }
    }

    fn dot_subbands(a: &Subbands<f64>, b: &Subbands<f64>) -> f64 {
        let mut acc = a
            .lowpass
            .data()
            .iter()
            .zip(b.lowpass.data())
            .map(|(x, y)| x * y)
            .sum::<f64>();
        for (ta, tb) in a.highpass.iter().zip(&b.highpass) {
            acc += ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum::<f64>();
        }
        acc
    }

    #[test]
    fn perfect_reconstruction_all_levels() {
        let fb = FilterBank::default();
        for &levels in &[1usize, 2, 3] {
            let x = rand_tensor(&[2, 3, 32, 24], 7 + levels as u64);
            let s = dtcwt_forward(&x, levels, &fb).unwrap();
            let y = dtcwt_inverse(&s, &fb).unwrap();
            let err = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "levels {levels}: max reconstruction error {err}");
        }
    }

    #[test]
    fn odd_sized_input_roundtrips_at_level_one() {
        let fb = FilterBank::default();
        let x = rand_tensor(&[1, 2, 33, 31], 11);
        let s = dtcwt_forward(&x, 1, &fb).unwrap();
        assert_eq!(s.lowpass.shape(), &[1, 2, 34, 32]);
        let y = dtcwt_inverse(&s, &fb).unwrap();
        assert_eq!(y.shape(), x.shape());
        let err = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "odd-size roundtrip error {err}");
    }

    #[test]
    fn too_many_levels_is_an_error() {
        let fb = FilterBank::default();
        let x = rand_tensor(&[1, 1, 8, 8], 1);
        assert!(dtcwt_forward(&x, 4, &fb).is_err());
    }

    #[test]
    fn redundancy_is_four_to_one() {
        let fb = FilterBank::default();
        let x = rand_tensor(&[1, 1, 32, 32], 3);
        for &levels in &[1usize, 2, 3] {
            let s = dtcwt_forward(&x, levels, &fb).unwrap();
            assert_eq!(s.total_elements(), 4 * x.numel(), "levels {levels}");
        }
    }

    #[test]
    fn quad_complex_map_roundtrips_and_preserves_energy() {
        let p = rand_tensor(&[1, 1, 4, 4], 21);
        let q = rand_tensor(&[1, 1, 4, 4], 22);
        let r = rand_tensor(&[1, 1, 4, 4], 23);
        let s = rand_tensor(&[1, 1, 4, 4], 24);
        let z = quad_to_complex(&p, &q, &r, &s).unwrap();
        let e_in = p.sq_norm() + q.sq_norm() + r.sq_norm() + s.sq_norm();
        let e_out: f64 = z.iter().map(|t| t.sq_norm()).sum();
        assert!((e_in - e_out).abs() < 1e-12);
        let [p2, q2, r2, s2] = complex_to_quad(&z);
        for (a, b) in [(&p, &p2), (&q, &q2), (&r, &r2), (&s, &s2)] {
            let err = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-13);
        }
    }

    #[test]
    fn forward_adjoint_identity() {
        let fb = FilterBank::default();
        let x = rand_tensor(&[1, 2, 16, 16], 31);
        for &levels in &[1usize, 2] {
            let fx = dtcwt_forward(&x, levels, &fb).unwrap();
            let y = rand_subbands(&fx, 32 + levels as u64);
            let aty = dtcwt_forward_adjoint(&y, &fb).unwrap();
            let lhs = dot_subbands(&fx, &y);
            let rhs = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum::<f64>();
            assert!(
                (lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0),
                "levels {levels}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn inverse_adjoint_identity() {
        let fb = FilterBank::default();
        let probe = dtcwt_forward(&rand_tensor(&[1, 2, 16, 16], 41), 2, &fb).unwrap();
        let s = rand_subbands(&probe, 42);
        let y = rand_tensor(&[1, 2, 16, 16], 43);
        let ix = dtcwt_inverse(&s, &fb).unwrap();
        let aty = dtcwt_inverse_adjoint(&y, 2, &fb).unwrap();
        let lhs = ix.data().iter().zip(y.data()).map(|(a, b)| a * b).sum::<f64>();
        let rhs = dot_subbands(&s, &aty);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    fn grating(h: usize, w: usize, theta_deg: f64, freq: f64) -> Tensor<f64> {
        let (st, ct) = theta_deg.to_radians().sin_cos();
        Tensor::from_fn(&[1, 1, h, w], |idx| {
            let (i, j) = ((idx / w) as f64, (idx % w) as f64);
            // wave vector perpendicular to the stripe direction
            (freq * (i * st + j * ct)).cos()
        })
    }

    #[test]
    fn gratings_land_in_the_matching_orientation_band() {
        let fb = FilterBank::default();
        // (angle, spatial frequency) pairs picked inside each band's passband
        let cases = [
            (15.0, 0.75 * std::f64::consts::PI),
            (45.0, 0.9 * std::f64::consts::PI),
            (75.0, 0.75 * std::f64::consts::PI),
            (105.0, 0.75 * std::f64::consts::PI),
            (135.0, 0.9 * std::f64::consts::PI),
            (165.0, 0.75 * std::f64::consts::PI),
        ];
        for (angle, freq) in cases {
            let x = grating(64, 64, angle, freq);
            let s = dtcwt_forward(&x, 1, &fb).unwrap();
            let hp = &s.highpass[0];
            let sh = hp.shape();
            let plane = sh[4] * sh[5];
            let mut energy = [0.0f64; 6];
            for orient in 0..6 {
                for reim in 0..2 {
                    let sl = band_slice(hp, 0, reim, orient, 0);
                    energy[orient] += sl.iter().map(|v| v * v).sum::<f64>();
                }
            }
            let _ = plane;
            let total: f64 = energy.iter().sum();
            let want = ORIENTATIONS_DEG.iter().position(|&d| d as f64 == angle).unwrap();
            let frac = energy[want] / total;
            assert!(
                frac > 0.60,
                "grating at {angle} deg: band fraction {frac:.3}, energies {energy:?}"
            );
        }
    }
}
