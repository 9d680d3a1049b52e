//! Valid (unpadded) 2-D convolution and its adjoints.
//!
//! Kernels are applied in cross-correlation orientation:
//!
//! ```text
//! out[c, i, j] = Σ_{c', u, v} w[c, c', u, v] · in[c', i + u, j + v]
//! ```
//!
//! Stride is always 1 and there are no additive terms. The transpose and the
//! kernel gradient use the same orientation, so `conv2d_transpose` is the exact
//! linear adjoint of `conv2d_valid` for a fixed kernel tensor.
//!
//! All three kernels lower to GEMM through an im2col buffer. Batch items are
//! processed in parallel; reductions over the batch happen in item order so
//! results do not depend on the thread count.

use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{Error, Result};

struct KernelDims {
    c_out: usize,
    c_in: usize,
    k: usize,
}

fn kernel_dims<T: Real>(kernels: &Tensor<T>, op: &'static str) -> Result<KernelDims> {
    match *kernels.shape() {
        [c_out, c_in, kh, kw] => {
            if kh != kw {
                return Err(Error::shape(
                    op,
                    format!("kernels must be square, got {kh}x{kw}"),
                ));
            }
            if kh == 0 || c_out == 0 || c_in == 0 {
                return Err(Error::shape(op, "kernel extents must be non-zero"));
            }
            Ok(KernelDims { c_out, c_in, k: kh })
        }
        _ => Err(Error::shape(
            op,
            format!(
                "kernels must be rank 4 [C_out,C_in,k,k], got {:?}",
                kernels.shape()
            ),
        )),
    }
}

/// Accepts `[C,H,W]` or `[B,C,H,W]`; returns `(B, C, H, W, batched)`.
fn image_dims<T: Real>(
    x: &Tensor<T>,
    op: &'static str,
) -> Result<(usize, usize, usize, usize, bool)> {
    match *x.shape() {
        [c, h, w] => Ok((1, c, h, w, false)),
        [b, c, h, w] => Ok((b, c, h, w, true)),
        _ => Err(Error::shape(
            op,
            format!("input must be [C,H,W] or [B,C,H,W], got {:?}", x.shape()),
        )),
    }
}

fn out_shape(batched: bool, b: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if batched {
        vec![b, c, h, w]
    } else {
        vec![c, h, w]
    }
}

/// Unrolls `[C,H,W]` into `[C·k·k, Ho·Wo]` columns.
fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut Vec<T>) {
    let (ho, wo) = (h - k + 1, w - k + 1);
    cols.clear();
    cols.resize(c * k * k * ho * wo, T::zero());
    let mut row = 0;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for i in 0..ho {
                    let src = &plane[(i + u) * w + v..(i + u) * w + v + wo];
                    dst[i * wo..(i + 1) * wo].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds `[C·k·k, Ho·Wo]` columns back into a zeroed `[C,H,W]` image.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let (ho, wo) = (h - k + 1, w - k + 1);
    out.iter_mut().for_each(|v| *v = T::zero());
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for u in 0..k {
            for v in 0..k {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for i in 0..ho {
                    let dst = &mut plane[(i + u) * w + v..(i + u) * w + v + wo];
                    for (d, &s) in dst.iter_mut().zip(&src[i * wo..(i + 1) * wo]) {
                        *d = *d + s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Valid cross-correlation: `[C_in,H,W] ⊛ [C_out,C_in,k,k] → [C_out,H−k+1,W−k+1]`.
///
/// A leading batch axis is accepted and preserved.
pub fn conv2d_valid<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_valid";
    let kd = kernel_dims(kernels, OP)?;
    let (b, c, h, w, batched) = image_dims(input, OP)?;
    if c != kd.c_in {
        return Err(Error::shape(
            OP,
            format!("input channels C_in={c} but kernels expect C_in={}", kd.c_in),
        ));
    }
    if kd.k > h || kd.k > w {
        return Err(Error::shape(
            OP,
            format!("kernel size k={} exceeds input extent H={h}, W={w}", kd.k),
        ));
    }
    let (ho, wo) = (h - kd.k + 1, w - kd.k + 1);
    let mut out = Tensor::zeros(&out_shape(batched, b, kd.c_out, ho, wo));
    let in_len = c * h * w;
    let out_len = kd.c_out * ho * wo;
    let rows = kd.c_in * kd.k * kd.k;
    let wdata = kernels.data();
    out.data_mut()
        .par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each_init(Vec::new, |cols, (dst, src)| {
            im2col(src, c, h, w, kd.k, cols);
            T::gemm(kd.c_out, rows, ho * wo, wdata, false, cols, false, dst, false);
        });
    Ok(out)
}

/// Exact adjoint of [`conv2d_valid`]: `[C_out,H',W'] → [C_in,H'+k−1,W'+k−1]`
/// using the same `[C_out,C_in,k,k]` kernel tensor.
pub fn conv2d_transpose<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_transpose";
    let kd = kernel_dims(kernels, OP)?;
    let (b, c, ho, wo, batched) = image_dims(input, OP)?;
    if c != kd.c_out {
        return Err(Error::shape(
            OP,
            format!("input channels C_out={c} but kernels expect C_out={}", kd.c_out),
        ));
    }
    if ho == 0 || wo == 0 {
        return Err(Error::shape(OP, "input extent must be non-zero"));
    }
    let (h, w) = (ho + kd.k - 1, wo + kd.k - 1);
    let mut out = Tensor::zeros(&out_shape(batched, b, kd.c_in, h, w));
    let in_len = c * ho * wo;
    let out_len = kd.c_in * h * w;
    let rows = kd.c_in * kd.k * kd.k;
    let wdata = kernels.data();
    out.data_mut()
        .par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each_init(Vec::new, |cols: &mut Vec<T>, (dst, src)| {
            cols.clear();
            cols.resize(rows * ho * wo, T::zero());
            // cols = Wᵀ · y, with W viewed as [C_out, C_in·k·k]
            T::gemm(rows, kd.c_out, ho * wo, wdata, true, src, false, cols, false);
            col2im(cols, kd.c_in, h, w, kd.k, dst);
        });
    Ok(out)
}

/// Gradient of `⟨conv2d_valid(input, W), grad_out⟩` with respect to `W`.
///
/// Also serves as the kernel gradient of [`conv2d_transpose`] with the roles
/// of the two arguments exchanged. Batch contributions are summed in order.
pub fn conv2d_kernel_grad<T: Real>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    k: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_kernel_grad";
    let (b, c_in, h, w, _) = image_dims(input, OP)?;
    let (gb, c_out, ho, wo, _) = image_dims(grad_out, OP)?;
    if gb != b || k == 0 || k > h || k > w || ho != h - k + 1 || wo != w - k + 1 {
        return Err(Error::shape(
            OP,
            format!(
                "input {:?} and output gradient {:?} are inconsistent with k={k}",
                input.shape(),
                grad_out.shape()
            ),
        ));
    }
    let rows = c_in * k * k;
    let in_len = c_in * h * w;
    let out_len = c_out * ho * wo;
    let partials: Vec<Vec<T>> = input
        .data()
        .par_chunks(in_len)
        .zip(grad_out.data().par_chunks(out_len))
        .map_init(Vec::new, |cols, (src, gy)| {
            im2col(src, c_in, h, w, k, cols);
            let mut dw = vec![T::zero(); c_out * rows];
            T::gemm(c_out, ho * wo, rows, gy, false, cols, true, &mut dw, false);
            dw
        })
        .collect();
    let mut total = vec![T::zero(); c_out * rows];
    for p in &partials {
        for (t, &v) in total.iter_mut().zip(p) {
            *t = *t + v;
        }
    }
    Tensor::new(&[c_out, c_in, k, k], total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Quadruple loop straight from the definition.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
        let [c_in, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2]];
        let [c_out, _, k, _] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let (ho, wo) = (h - k + 1, wd - k + 1);
        let mut out = Tensor::zeros(&[c_out, ho, wo]);
        for co in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for u in 0..k {
                            for v in 0..k {
                                acc += w.at(&[co, ci, u, v]) * x.at(&[ci, i + u, j + v]);
                            }
                        }
                    }
                    out.set(&[co, i, j], acc);
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[1, 5, 7], &mut rng);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d_valid(&x, &w).unwrap(), x);
        assert_eq!(conv2d_transpose(&x, &w).unwrap(), x);
    }

    #[test]
    fn delta_kernel_selects_window() {
        let x = Tensor::<f64>::from_fn(&[1, 5, 5], |i| i as f64);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.set(&[0, 0, 0, 0], 1.0);
        let y = conv2d_valid(&x, &w).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(y.at(&[0, i, j]), x.at(&[0, i, j]));
            }
        }
    }

    #[test]
    fn delta_kernel_transpose_scatters_with_offset() {
        let y = Tensor::<f64>::from_fn(&[1, 3, 3], |i| 1.0 + i as f64);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.set(&[0, 0, 1, 2], 1.0);
        let x = conv2d_transpose(&y, &w).unwrap();
        assert_eq!(x.shape(), &[1, 5, 5]);
        for i in 0..5 {
            for j in 0..5 {
                let expect = if (1..4).contains(&i) && (2..5).contains(&j) {
                    y.at(&[0, i - 1, j - 2])
                } else {
                    0.0
                };
                assert_eq!(x.at(&[0, i, j]), expect);
            }
        }
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[2, 6, 6], &mut rng);
        let w = random(&[4, 2, 3, 3], &mut rng);
        let fast = conv2d_valid(&x, &w).unwrap();
        let slow = conv_oracle(&x, &w);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
        // f32 path against the same oracle
        let fast32 = conv2d_valid(&x.cast::<f32>(), &w.cast::<f32>()).unwrap();
        for (a, b) in fast32.data().iter().zip(slow.data()) {
            assert!((*a as f64 - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn batched_equals_per_item() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[3, 2, 8, 9], &mut rng);
        let w = random(&[5, 2, 3, 3], &mut rng);
        let y = conv2d_valid(&x, &w).unwrap();
        for b in 0..3 {
            assert_eq!(y.index_axis0(b), conv2d_valid(&x.index_axis0(b), &w).unwrap());
        }
    }

    #[test]
    fn kernel_grad_matches_inner_product_derivative() {
        // d/dW <conv(x, W), g> is linear in W, so it equals the vector of
        // inner products with each unit kernel.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[2, 2, 6, 5], &mut rng);
        let g = random(&[2, 3, 4, 3], &mut rng);
        let dw = conv2d_kernel_grad(&x, &g, 3).unwrap();
        for idx in 0..dw.len() {
            let mut e = Tensor::zeros(&[3, 2, 3, 3]);
            e.data_mut()[idx] = 1.0;
            let expect = conv2d_valid(&x, &e).unwrap().dot(&g).unwrap();
            assert!((dw.data()[idx] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_the_extent() {
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let e = conv2d_valid(&x, &w).unwrap_err().to_string();
        assert!(e.contains("C_in"), "{e}");
        let w = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let e = conv2d_valid(&x, &w).unwrap_err().to_string();
        assert!(e.contains("k=5"), "{e}");
        let w = Tensor::<f32>::zeros(&[1, 2, 3, 2]);
        assert!(conv2d_valid(&x, &w).is_err());
        let y = Tensor::<f32>::zeros(&[3, 2, 2]);
        let w = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        let e = conv2d_transpose(&y, &w).unwrap_err().to_string();
        assert!(e.contains("C_out"), "{e}");
    }
}
