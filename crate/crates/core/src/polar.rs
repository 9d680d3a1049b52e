//! Complex pairing of feature channels and phase-advance extrapolation.
//!
//! Channel `2k` of a real feature map is the real part and channel `2k+1` the
//! imaginary part of complex channel `k`. Extrapolation keeps the current
//! amplitude and advances the phase by the change observed over the previous
//! interval:
//!
//! ```text
//! ẑ(t+1) = z(t)² · conj(z(t−1)) / (|z(t)|·|z(t−1)| + ε)
//! ```
//!
//! Phases are never formed explicitly; everything goes through complex
//! products, so the map is smooth away from the origin and, with `ε > 0`,
//! differentiable everywhere.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::tensor::{dft2, idft2, ComplexTensor, Real, Tensor};

/// Default denominator stabilizer for [`phase_advance`]. The relative
/// amplitude loss is `eps / (|z_t||z_tm1| + eps)`, below 1e-4 whenever both
/// amplitudes exceed 1e-2.
pub const DEFAULT_EPS_AMP: f64 = 1e-8;

/// `K` complex channels over an `H×W` grid, with optional leading axes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexFeatureMap<T: Real = f32> {
    inner: ComplexTensor<T>,
}

impl<T: Real> ComplexFeatureMap<T> {
    pub fn from_complex(inner: ComplexTensor<T>) -> Result<Self> {
        if inner.shape().len() < 3 {
            return Err(Error::shape(
                "ComplexFeatureMap",
                format!("expected [..,K,H,W], got {:?}", inner.shape()),
            ));
        }
        Ok(Self { inner })
    }

    pub fn shape(&self) -> &[usize] {
        self.inner.shape()
    }

    pub fn data(&self) -> &[Complex<T>] {
        self.inner.data()
    }

    pub fn as_complex(&self) -> &ComplexTensor<T> {
        &self.inner
    }
}

/// `(outer, channels, plane)` view of a `[.., C, H, W]` tensor.
fn channel_layout(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    let r = shape.len();
    if r < 3 {
        return Err(Error::shape(
            op,
            format!("expected [..,C,H,W], got {shape:?}"),
        ));
    }
    let outer = shape[..r - 3].iter().product();
    Ok((outer, shape[r - 3], shape[r - 2] * shape[r - 1]))
}

fn even_channels(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    let (outer, c, plane) = channel_layout(shape, op)?;
    if c % 2 != 0 {
        return Err(Error::shape(
            op,
            format!("channel count {c} is odd; channels must pair up"),
        ));
    }
    Ok((outer, c / 2, plane))
}

/// Combines channels `(2k, 2k+1)` into complex channel `k`.
pub fn pair_channels<T: Real>(y: &Tensor<T>) -> Result<ComplexFeatureMap<T>> {
    let (outer, k, plane) = even_channels(y.shape(), "pair_channels")?;
    let src = y.data();
    let mut data = Vec::with_capacity(outer * k * plane);
    for o in 0..outer {
        for ch in 0..k {
            let re = &src[(o * 2 * k + 2 * ch) * plane..][..plane];
            let im = &src[(o * 2 * k + 2 * ch + 1) * plane..][..plane];
            data.extend(re.iter().zip(im).map(|(&a, &b)| Complex::new(a, b)));
        }
    }
    let mut shape = y.shape().to_vec();
    let r = shape.len();
    shape[r - 3] = k;
    ComplexFeatureMap::from_complex(ComplexTensor::new(&shape, data)?)
}

/// Inverse of [`pair_channels`].
pub fn unpair_channels<T: Real>(z: &ComplexFeatureMap<T>) -> Tensor<T> {
    let (outer, k, plane) = channel_layout(z.shape(), "unpair_channels").expect("rank checked");
    let mut data = vec![T::zero(); outer * 2 * k * plane];
    for o in 0..outer {
        for ch in 0..k {
            let src = &z.data()[(o * k + ch) * plane..][..plane];
            let base = (o * 2 * k + 2 * ch) * plane;
            for (i, v) in src.iter().enumerate() {
                data[base + i] = v.re;
                data[base + plane + i] = v.im;
            }
        }
    }
    let mut shape = z.shape().to_vec();
    let r = shape.len();
    shape[r - 3] = 2 * k;
    Tensor::new(&shape, data).expect("extent bookkeeping")
}

/// Single-coefficient phase advance.
///
/// With `eps == 0` and a vanishing denominator the prediction is zero.
#[inline]
pub fn advance_coefficient<T: Real>(zt: Complex<T>, zm: Complex<T>, eps: T) -> Complex<T> {
    let den = zt.norm() * zm.norm() + eps;
    if den == T::zero() {
        return Complex::new(T::zero(), T::zero());
    }
    zt * zt * zm.conj() / den
}

/// Elementwise phase advance of two complex feature maps.
pub fn phase_advance<T: Real>(
    zt: &ComplexFeatureMap<T>,
    zm: &ComplexFeatureMap<T>,
    eps: T,
) -> Result<ComplexFeatureMap<T>> {
    if zt.shape() != zm.shape() {
        return Err(Error::shape(
            "phase_advance",
            format!("{:?} vs {:?}", zt.shape(), zm.shape()),
        ));
    }
    let data = zt
        .data()
        .iter()
        .zip(zm.data())
        .map(|(&a, &b)| advance_coefficient(a, b, eps))
        .collect();
    ComplexFeatureMap::from_complex(ComplexTensor::new(zt.shape(), data)?)
}

/// Amplitude `|z|` and phase `atan2(Im, Re)` in `(−π, π]`.
///
/// For inspection only: the phase is unstable wherever the amplitude is small.
pub fn polar_decompose<T: Real>(z: &ComplexFeatureMap<T>) -> (Tensor<T>, Tensor<T>) {
    let amp = z.data().iter().map(|v| v.norm()).collect();
    let phase = z
        .data()
        .iter()
        .map(|v| {
            let p = v.im.atan2(v.re);
            // atan2(−0, x<0) is −π; fold onto +π so the range is (−π, π]
            if p == -T::from_f64_lossy(std::f64::consts::PI) {
                -p
            } else {
                p
            }
        })
        .collect();
    (
        Tensor::new(z.shape(), amp).expect("shape"),
        Tensor::new(z.shape(), phase).expect("shape"),
    )
}

/// Phase advance applied directly to real `[.., 2K, H, W]` channel tensors.
pub fn phase_advance_channels<T: Real>(
    zt: &Tensor<T>,
    zm: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    const OP: &str = "phase_advance";
    zt.expect_same_shape(zm, OP)?;
    let (outer, k, plane) = even_channels(zt.shape(), OP)?;
    let mut out = Tensor::zeros(zt.shape());
    let (a, b, o) = (zt.data(), zm.data(), out.data_mut());
    for base in (0..outer * k).map(|p| 2 * p * plane) {
        for i in 0..plane {
            let (re, im) = (base + i, base + plane + i);
            let z = advance_coefficient(
                Complex::new(a[re], a[im]),
                Complex::new(b[re], b[im]),
                eps,
            );
            o[re] = z.re;
            o[im] = z.im;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`phase_advance_channels`].
///
/// Returns the gradients with respect to `zt` and `zm` given the gradient of
/// the output.
pub fn phase_advance_channels_backward<T: Real>(
    zt: &Tensor<T>,
    zm: &Tensor<T>,
    eps: T,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    const OP: &str = "phase_advance_backward";
    zt.expect_same_shape(zm, OP)?;
    zt.expect_same_shape(grad, OP)?;
    let (outer, k, plane) = even_channels(zt.shape(), OP)?;
    let mut g_t = Tensor::zeros(zt.shape());
    let mut g_m = Tensor::zeros(zt.shape());
    let two = T::from_f64_lossy(2.0);
    let (za, zb, g) = (zt.data(), zm.data(), grad.data());
    for base in (0..outer * k).map(|p| 2 * p * plane) {
        for i in 0..plane {
            let (ri, ii) = (base + i, base + plane + i);
            // z(t) = a + ib, z(t−1) = c + ie
            let (a, b, c, e) = (za[ri], za[ii], zb[ri], zb[ii]);
            let rt = (a * a + b * b).sqrt();
            let rm = (c * c + e * e).sqrt();
            let den = rt * rm + eps;
            if den == T::zero() {
                continue;
            }
            let sq_re = a * a - b * b;
            let sq_im = two * a * b;
            let p_re = sq_re * c + sq_im * e;
            let p_im = sq_im * c - sq_re * e;
            let (go_re, go_im) = (g[ri], g[ii]);
            let d_pre = go_re / den;
            let d_pim = go_im / den;
            let d_den = -(go_re * p_re + go_im * p_im) / (den * den);
            // ∂den/∂a = rm·a/rt, zero where the modulus vanishes
            let (dden_a, dden_b) = if rt > T::zero() {
                (rm * a / rt, rm * b / rt)
            } else {
                (T::zero(), T::zero())
            };
            let (dden_c, dden_e) = if rm > T::zero() {
                (rt * c / rm, rt * e / rm)
            } else {
                (T::zero(), T::zero())
            };
            g_t.data_mut()[ri] = d_pre * (two * a * c + two * b * e)
                + d_pim * (two * b * c - two * a * e)
                + d_den * dden_a;
            g_t.data_mut()[ii] = d_pre * (two * a * e - two * b * c)
                + d_pim * (two * a * c + two * b * e)
                + d_den * dden_b;
            g_m.data_mut()[ri] = d_pre * sq_re + d_pim * sq_im + d_den * dden_c;
            g_m.data_mut()[ii] = d_pre * sq_im - d_pim * sq_re + d_den * dden_e;
        }
    }
    Ok((g_t, g_m))
}

/// Linear latent extrapolation `2·y(t) − y(t−1)`.
pub fn linear_extrapolate<T: Real>(cur: &Tensor<T>, prev: &Tensor<T>) -> Result<Tensor<T>> {
    let two = T::from_f64_lossy(2.0);
    cur.zip_map(prev, |a, b| two * a - b)
}

/// Global Fourier predictor: analyze with the 2-D DFT, advance every
/// coefficient's phase by its change between the two frames, synthesize.
///
/// Uses an unstabilized advance (coefficients with zero amplitude in either
/// frame predict zero), so a cyclically translating image at constant
/// velocity is reproduced to machine precision.
pub fn fourier_predict<T: Real>(prev: &Tensor<T>, cur: &Tensor<T>) -> Result<Tensor<T>> {
    prev.expect_same_shape(cur, "fourier_predict")?;
    let a = dft2(prev)?;
    let b = dft2(cur)?;
    let advanced: Vec<_> = b
        .data()
        .iter()
        .zip(a.data())
        .map(|(&zt, &zm)| advance_coefficient(zt, zm, T::zero()))
        .collect();
    let spec = ComplexTensor::new(cur.shape(), advanced)?;
    Ok(idft2(&spec)?.re())
}
