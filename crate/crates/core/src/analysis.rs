//! Diagnostics for learned filters: spectral concentration, quadrature
//! structure of channel pairs, and recovery scores against known bases.
//!
//! A channel pair `(a, b)` is read as the complex filter `a + i·b`. Its
//! global phase is arbitrary, so pair-level scores are built to be
//! invariant to rotating `(a, b)` within the pair.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{dft2, Real, Tensor};

/// Spectral concentration a pair needs to count as recovered.
pub const PASS_CONCENTRATION: f64 = 0.5;
/// Allowed distance of the quadrature offset from 90°.
pub const PASS_OFFSET_TOL_DEG: f64 = 15.0;
/// Highest angular order scored by the disk-harmonic projection.
pub const MAX_ANGULAR_ORDER: i32 = 8;

/// Signed frequency of DFT index `k` on an `n`-point axis: `[-n/2, n/2)`.
fn signed(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn neg(k: usize, n: usize) -> usize {
    (n - k) % n
}

fn spectrum<T: Real>(f: &Tensor<T>) -> Result<Vec<Complex<f64>>> {
    if f.rank() != 2 {
        return Err(Error::shape("spectrum", format!("expected [k,k], got {:?}", f.shape())));
    }
    Ok(dft2(&f.cast::<f64>())?.data().to_vec())
}

/// Representative of the bin pair `{k, -k}`: the first in row-major order.
fn canonical(ky: usize, kx: usize, h: usize, w: usize) -> (usize, usize) {
    let (ny, nx) = (neg(ky, h), neg(kx, w));
    if (ky, kx) <= (ny, nx) {
        (ky, kx)
    } else {
        (ny, nx)
    }
}

/// Index of the largest power; ties go to the canonical bin first in row-major order.
fn dominant(power: &[f64], h: usize, w: usize) -> (usize, usize) {
    let mut best = (0usize, 0usize);
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in power.iter().enumerate() {
        let c = canonical(i / w, i % w, h, w);
        if p > best_p || (p == best_p && c < best) {
            best_p = p;
            best = c;
        }
    }
    best
}

/// Energy share of `{k, -k}` in `power`.
fn share(power: &[f64], k: (usize, usize), h: usize, w: usize) -> f64 {
    let total: f64 = power.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let (a, b) = (k.0 * w + k.1, neg(k.0, h) * w + neg(k.1, w));
    let e = if a == b { power[a] } else { power[a] + power[b] };
    e / total
}

/// Dominant signed 2-D frequency of a `[k,k]` filter and the share of its
/// energy at that conjugate frequency pair.
pub fn spectral_concentration<T: Real>(filter: &Tensor<T>) -> Result<((i64, i64), f64)> {
    let s = spectrum(filter)?;
    let (h, w) = filter.hw();
    let p: Vec<f64> = s.iter().map(|c| c.norm_sqr()).collect();
    let k = dominant(&p, h, w);
    Ok(((signed(k.0, h), signed(k.1, w)), share(&p, k, h, w)))
}

/// Spectra of a pair and their shared dominant bin (argmax of `|A|² + |B|²`).
fn pair_spectra<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Vec<Complex<f64>>, Vec<Complex<f64>>, (usize, usize))> {
    a.expect_same_shape(b, "pair")?;
    let (sa, sb) = (spectrum(a)?, spectrum(b)?);
    let (h, w) = a.hw();
    let p: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x.norm_sqr() + y.norm_sqr()).collect();
    let k = dominant(&p, h, w);
    Ok((sa, sb, k))
}

/// Phase difference of `a` and `b` at their shared dominant frequency,
/// folded to `[0°, 180°]`.
pub fn quadrature_offset<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (sa, sb, k) = pair_spectra(a, b)?;
    let i = k.0 * a.hw().1 + k.1;
    let d = (sa[i] * sb[i].conj()).arg().to_degrees();
    Ok(d.abs())
}

/// Pair-level scores, all invariant to rotating `(a, b)` within the pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairSpectrum {
    /// Shared dominant signed frequency.
    pub frequency: (i64, i64),
    /// Share of the pair's total energy at `{k, -k}`.
    pub concentration: f64,
    /// `asin(|2·Im(A·conj B)| / (|A|² + |B|²))` at the dominant bin, in
    /// degrees: 90° for an equal-amplitude quadrature pair, 0° for
    /// collinear members.
    pub offset: f64,
}

pub fn pair_spectrum<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<PairSpectrum> {
    let (sa, sb, k) = pair_spectra(a, b)?;
    let (h, w) = a.hw();
    let p: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x.norm_sqr() + y.norm_sqr()).collect();
    let i = k.0 * w + k.1;
    let den = sa[i].norm_sqr() + sb[i].norm_sqr();
    let offset = if den == 0.0 {
        0.0
    } else {
        (2.0 * (sa[i] * sb[i].conj()).im.abs() / den).min(1.0).asin().to_degrees()
    };
    Ok(PairSpectrum {
        frequency: (signed(k.0, h), signed(k.1, w)),
        concentration: share(&p, k, h, w),
        offset,
    })
}

/// Energy share of the strongest angular order of the complex filter
/// `a + i·b` on concentric one-pixel rings about the center, for orders
/// `-8..=8`. Returns `(order, share)`.
pub fn disk_harmonic_share<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(i32, f64)> {
    a.expect_same_shape(b, "disk_harmonic")?;
    let (h, w) = a.hw();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let rmax = h.min(w) as f64 / 2.0;
    let rings = rmax.ceil() as usize + 1;
    let orders = 2 * MAX_ANGULAR_ORDER as usize + 1;
    let mut coef = vec![Complex::new(0.0, 0.0); rings * orders];
    let mut count = vec![0usize; rings];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let r = (dy * dy + dx * dx).sqrt();
            if r > rmax {
                continue;
            }
            let ring = r.round() as usize;
            let f = Complex::new(a.data()[y * w + x].as_f64(), b.data()[y * w + x].as_f64());
            let th = dy.atan2(dx);
            count[ring] += 1;
            for (j, m) in (-MAX_ANGULAR_ORDER..=MAX_ANGULAR_ORDER).enumerate() {
                coef[ring * orders + j] += f * Complex::from_polar(1.0, -(m as f64) * th);
            }
        }
    }
    let mut energy = vec![0.0; orders];
    for ring in 0..rings {
        if count[ring] == 0 {
            continue;
        }
        for (j, e) in energy.iter_mut().enumerate() {
            *e += coef[ring * orders + j].norm_sqr() / count[ring] as f64;
        }
    }
    let total: f64 = energy.iter().sum();
    let (j, &best) = energy
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (j, e)| if *e > *acc.1 { (j, e) } else { acc });
    let share = if total == 0.0 { 0.0 } else { best / total };
    Ok((j as i32 - MAX_ANGULAR_ORDER, share))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expected {
    Fourier,
    DiskHarmonic,
}

impl std::str::FromStr for Expected {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fourier" => Ok(Expected::Fourier),
            "disk_harmonic" => Ok(Expected::DiskHarmonic),
            _ => Err("expected fourier or disk_harmonic".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryScore {
    pub pairs: usize,
    pub passed: usize,
    /// Per-pair `(score, passed)`: concentration for Fourier, dominant
    /// angular share for disk harmonics.
    pub per_pair: Vec<(f64, bool)>,
}

fn split_pairs<T: Real>(weights: &Tensor<T>) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    let (c, cin, kh, kw) = weights.dims4("filters")?;
    if cin != 1 {
        return Err(Error::shape("filters", format!("expected one input channel, got {cin}")));
    }
    if c % 2 != 0 {
        return Err(Error::shape("filters", format!("odd channel count {c}")));
    }
    Ok((0..c / 2)
        .map(|p| {
            let f = |ch: usize| weights.index_axis0(ch).reshape(&[kh, kw]).expect("plane");
            (f(2 * p), f(2 * p + 1))
        })
        .collect())
}

/// Counts recovered pairs of `[2K,1,k,k]` weights. Fourier: concentration
/// ≥ 0.5 and pair offset within 90° ± 15°. Disk harmonics: dominant angular
/// order holds ≥ 0.5 of the pair's ring energy.
pub fn recovery_score<T: Real>(weights: &Tensor<T>, expected: Expected) -> Result<RecoveryScore> {
    let pairs = split_pairs(weights)?;
    let per_pair: Vec<(f64, bool)> = pairs
        .par_iter()
        .map(|(a, b)| match expected {
            Expected::Fourier => {
                let s = pair_spectrum(a, b)?;
                let ok = s.concentration >= PASS_CONCENTRATION && (s.offset - 90.0).abs() <= PASS_OFFSET_TOL_DEG;
                Ok((s.concentration, ok))
            }
            Expected::DiskHarmonic => {
                let (_, share) = disk_harmonic_share(a, b)?;
                Ok((share, share >= PASS_CONCENTRATION))
            }
        })
        .collect::<Result<_>>()?;
    Ok(RecoveryScore {
        pairs: per_pair.len(),
        passed: per_pair.iter().filter(|p| p.1).count(),
        per_pair,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairReport {
    /// Pair index `p`: channels `2p` and `2p+1`.
    pub pair: usize,
    pub norm: f64,
    pub frequency: (i64, i64),
    pub concentration: f64,
    pub offset: f64,
    /// Dominant frequencies of the two members agree up to sign.
    pub frequency_agreement: bool,
}

/// Per-pair diagnostics sorted by descending norm; ties keep channel order.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterReport {
    pub pairs: Vec<PairReport>,
}

impl FilterReport {
    pub fn from_weights<T: Real>(weights: &Tensor<T>) -> Result<Self> {
        let pairs = split_pairs(weights)?;
        let mut rows: Vec<PairReport> = pairs
            .par_iter()
            .enumerate()
            .map(|(p, (a, b))| {
                let s = pair_spectrum(a, b)?;
                let (fa, _) = spectral_concentration(a)?;
                let (fb, _) = spectral_concentration(b)?;
                Ok(PairReport {
                    pair: p,
                    norm: (a.norm().powi(2) + b.norm().powi(2)).sqrt(),
                    frequency: s.frequency,
                    concentration: s.concentration,
                    offset: s.offset,
                    frequency_agreement: fa == fb || fa == (-fb.0, -fb.1),
                })
            })
            .collect::<Result<_>>()?;
        rows.sort_by(|x, y| y.norm.total_cmp(&x.norm));
        Ok(Self { pairs: rows })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,norm,freq_y,freq_x,concentration,offset_deg,freq_agree\n");
        for r in &self.pairs {
            let _ = writeln!(
                s,
                "{},{:.6e},{},{},{:.6},{:.3},{}",
                r.pair, r.norm, r.frequency.0, r.frequency.1, r.concentration, r.offset, r.frequency_agreement as u8
            );
        }
        s
    }
}

/// Non-redundant DFT bins of an `n×n` patch, one per `{k, -k}` class, in
/// row-major order. The four self-conjugate bins of an even `n` are included.
pub fn half_plane_bins(n: usize) -> Vec<(usize, usize)> {
    (0..n * n)
        .map(|i| (i / n, i % n))
        .filter(|&(y, x)| canonical(y, x, n, n) == (y, x))
        .collect()
}

fn quadrature_filters(n: usize, bins: &[(usize, usize)]) -> Tensor<f64> {
    let mut data = Vec::with_capacity(bins.len() * 2 * n * n);
    let nn = n as f64;
    for &(ky, kx) in bins {
        let selfconj = (neg(ky, n), neg(kx, n)) == (ky, kx);
        let scale = if selfconj { 1.0 / nn } else { 2f64.sqrt() / nn };
        let th = |y: usize, x: usize| 2.0 * PI * ((ky * y + kx * x) % n) as f64 / nn;
        data.extend((0..n * n).map(|i| scale * th(i / n, i % n).cos()));
        data.extend((0..n * n).map(|i| if selfconj { 0.0 } else { -scale * th(i / n, i % n).sin() }));
    }
    Tensor::new(&[2 * bins.len(), 1, n, n], data).expect("extent")
}

/// Analytic Fourier quadrature pairs on an `n×n` patch: for each
/// non-redundant bin, a cosine and a negated sine grating, so the pair's
/// complex response is a scaled DFT coefficient. The set is orthonormal and
/// complete, so analysis followed by synthesis with the same weights is the
/// identity. Returns `[2K,1,n,n]`.
pub fn fourier_quadrature_pairs(n: usize) -> Tensor<f64> {
    quadrature_filters(n, &half_plane_bins(n))
}

/// The `count` lowest-frequency pairs (by `|k|²`, then row-major) that are
/// not self-conjugate.
pub fn fourier_quadrature_subset(n: usize, count: usize) -> Tensor<f64> {
    let mut bins: Vec<_> = half_plane_bins(n)
        .into_iter()
        .filter(|&(y, x)| (neg(y, n), neg(x, n)) != (y, x))
        .collect();
    bins.sort_by_key(|&(y, x)| (signed(y, n).pow(2) + signed(x, n).pow(2), y, x));
    bins.truncate(count);
    quadrature_filters(n, &bins)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grating(n: usize, fy: f64, fx: f64, phase: f64) -> Tensor<f64> {
        Tensor::from_fn(&[n, n], |i| {
            (2.0 * PI * (fy * (i / n) as f64 + fx * (i % n) as f64) / n as f64 + phase).cos()
        })
    }

    #[test]
    fn basis_is_orthonormal_and_complete() {
        let b = fourier_quadrature_pairs(16);
        assert_eq!(b.shape(), &[260, 1, 16, 16]);
        assert_eq!(half_plane_bins(16).len(), 130);
        let rows: Vec<Tensor<f64>> = (0..260).map(|c| b.index_axis0(c)).collect();
        let nonzero: Vec<&Tensor<f64>> = rows.iter().filter(|r| r.norm() > 0.0).collect();
        assert_eq!(nonzero.len(), 256);
        for (i, a) in nonzero.iter().enumerate() {
            for (j, c) in nonzero.iter().enumerate().skip(i) {
                let d = a.dot(c).unwrap();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12, "{i} {j} {d}");
            }
        }
    }

    #[test]
    fn concentration_examples() {
        let (f, c) = spectral_concentration(&grating(16, 2.0, 3.0, 0.4)).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert!(f == (2, 3) || f == (-2, -3));
        let (f, c) = spectral_concentration(&Tensor::<f64>::full(&[16, 16], 0.3)).unwrap();
        assert_eq!(f, (0, 0));
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offsets() {
        let c = grating(16, 1.0, 2.0, 0.0);
        let s = grating(16, 1.0, 2.0, -PI / 2.0);
        assert!((quadrature_offset(&c, &s).unwrap() - 90.0).abs() < 1e-9);
        assert!(quadrature_offset(&c, &c).unwrap().abs() < 1e-9);
        assert!((quadrature_offset(&c, &c.scale(-1.0)).unwrap() - 180.0).abs() < 1e-9);
        let p = pair_spectrum(&c, &s).unwrap();
        assert!((p.offset - 90.0).abs() < 1e-6 && (p.concentration - 1.0).abs() < 1e-12);
        assert!(pair_spectrum(&c, &c).unwrap().offset.abs() < 1e-9);
    }

    #[test]
    fn subset_passes_recovery() {
        let w = fourier_quadrature_subset(16, 32);
        assert_eq!(w.shape(), &[64, 1, 16, 16]);
        let r = recovery_score(&w, Expected::Fourier).unwrap();
        assert_eq!((r.pairs, r.passed), (32, 32));
    }

    #[test]
    fn disk_harmonic_of_pure_order() {
        let n = 16;
        let c = (n as f64 - 1.0) / 2.0;
        let mk = |part: fn(f64) -> f64| {
            Tensor::from_fn(&[n, n], |i| {
                let (dy, dx) = ((i / n) as f64 - c, (i % n) as f64 - c);
                let r = (dy * dy + dx * dx).sqrt();
                (-(r - 4.0).powi(2) / 4.0).exp() * part(3.0 * dy.atan2(dx))
            })
        };
        let (m, share) = disk_harmonic_share(&mk(f64::cos), &mk(f64::sin)).unwrap();
        assert_eq!(m, 3);
        assert!(share > 0.95, "{share}");
    }

    #[test]
    fn report_sorted_by_norm() {
        let mut w = fourier_quadrature_subset(8, 3);
        for v in &mut w.data_mut()[2 * 64..4 * 64] {
            *v *= 3.0;
        }
        let r = FilterReport::from_weights(&w).unwrap();
        assert_eq!(r.pairs.iter().map(|p| p.pair).collect::<Vec<_>>(), vec![1, 0, 2]);
        assert!(r.pairs.iter().all(|p| p.frequency_agreement));
        assert_eq!(r.to_csv().lines().count(), 4);
    }
}
