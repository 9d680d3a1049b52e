//! Direct 2-D discrete Fourier transform.
//!
//! Forward convention: `X(k) = Σ_n x(n) · e^{−2πi k·n / N}`; the inverse carries
//! the `1/(H·W)` factor. The transform is separable and evaluated directly
//! (no FFT) with exact `k·n mod N` twiddle indexing, which keeps the
//! shift-theorem identities at machine precision for the small extents used
//! here.

use num_complex::Complex;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Complex tensor with interleaved `(re, im)` storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T: Real = f64> {
    shape: Vec<usize>,
    data: Vec<Complex<T>>,
}

impl<T: Real> ComplexTensor<T> {
    pub fn new(shape: &[usize], data: Vec<Complex<T>>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "ComplexTensor::new",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_real(x: &Tensor<T>) -> Self {
        Self {
            shape: x.shape().to_vec(),
            data: x.data().iter().map(|&v| Complex::new(v, T::zero())).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn at(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.shape[1] + col]
    }

    pub fn re(&self) -> Tensor<T> {
        Tensor::new(&self.shape, self.data.iter().map(|z| z.re).collect())
            .expect("shape preserved")
    }

    pub fn im(&self) -> Tensor<T> {
        Tensor::new(&self.shape, self.data.iter().map(|z| z.im).collect())
            .expect("shape preserved")
    }
}

fn twiddles<T: Real>(n: usize, sign: f64) -> Vec<Complex<T>> {
    (0..n)
        .map(|m| {
            let a = sign * 2.0 * std::f64::consts::PI * m as f64 / n as f64;
            Complex::new(T::from_f64_lossy(a.cos()), T::from_f64_lossy(a.sin()))
        })
        .collect()
}

fn transform<T: Real>(x: &ComplexTensor<T>, sign: f64) -> Result<ComplexTensor<T>> {
    let (h, w) = match *x.shape() {
        [h, w] if h > 0 && w > 0 => (h, w),
        _ => {
            return Err(Error::shape(
                "dft2",
                format!("expected non-empty [H,W], got {:?}", x.shape()),
            ))
        }
    };
    let tw_w = twiddles::<T>(w, sign);
    let tw_h = twiddles::<T>(h, sign);
    let mut rows = vec![Complex::new(T::zero(), T::zero()); h * w];
    for r in 0..h {
        let src = &x.data[r * w..(r + 1) * w];
        for k in 0..w {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (n, &v) in src.iter().enumerate() {
                acc = acc + v * tw_w[(k * n) % w];
            }
            rows[r * w + k] = acc;
        }
    }
    let mut out = vec![Complex::new(T::zero(), T::zero()); h * w];
    for c in 0..w {
        for k in 0..h {
            let mut acc = Complex::new(T::zero(), T::zero());
            for n in 0..h {
                acc = acc + rows[n * w + c] * tw_h[(k * n) % h];
            }
            out[k * w + c] = acc;
        }
    }
    ComplexTensor::new(&[h, w], out)
}

/// Forward 2-D DFT of a real `[H,W]` image.
pub fn dft2<T: Real>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    transform(&ComplexTensor::from_real(x), -1.0)
}

/// Inverse 2-D DFT, including the `1/(H·W)` normalization.
pub fn idft2<T: Real>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    let mut y = transform(x, 1.0)?;
    let scale = T::from_f64_lossy(1.0 / y.data.len() as f64);
    for v in &mut y.data {
        *v = *v * scale;
    }
    Ok(y)
}
