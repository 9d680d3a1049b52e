//! Spatial cropping and resampling over the last two axes.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Copies the `[top..top+h, left..left+w]` window of every trailing plane.
pub fn center_crop_at<T: Real>(
    x: &Tensor<T>,
    top: usize,
    left: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::shape("crop", "needs at least [H,W]"));
    }
    let (sh, sw) = x.hw();
    if top + h > sh || left + w > sw {
        return Err(Error::shape(
            "crop",
            format!("window {h}x{w} at ({top},{left}) exceeds {sh}x{sw}"),
        ));
    }
    let planes = x.len() / (sh * sw).max(1);
    let mut data = Vec::with_capacity(planes * h * w);
    for p in 0..planes {
        let plane = &x.data()[p * sh * sw..(p + 1) * sh * sw];
        for r in top..top + h {
            data.extend_from_slice(&plane[r * sw + left..r * sw + left + w]);
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = h;
    shape[r - 1] = w;
    Tensor::new(&shape, data)
}

/// Removes an `m`-pixel strip from each side of the last two axes.
pub fn trim_border<T: Real>(x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::shape("trim_border", "needs at least [H,W]"));
    }
    let (h, w) = x.hw();
    if 2 * m >= h || 2 * m >= w {
        return Err(Error::shape(
            "trim_border",
            format!("trim m={m} removes all of H={h}, W={w}"),
        ));
    }
    center_crop_at(x, m, m, h - 2 * m, w - 2 * m)
}

/// Central `size×size` crop; the offset `(H−size)/2` is rounded down.
pub fn center_crop<T: Real>(x: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::shape("center_crop", "needs at least [H,W]"));
    }
    let (h, w) = x.hw();
    if size == 0 || size > h || size > w {
        return Err(Error::shape(
            "center_crop",
            format!("crop {size} does not fit H={h}, W={w}"),
        ));
    }
    center_crop_at(x, (h - size) / 2, (w - size) / 2, size, size)
}

/// 2×2 box average over the last two axes; both must be even.
pub fn downsample2_avg<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::shape("downsample2_avg", "needs at least [H,W]"));
    }
    let (h, w) = x.hw();
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(
            "downsample2_avg",
            format!("H={h} and W={w} must be even and non-zero"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let planes = x.len() / (h * w);
    let mut data = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let s = &x.data()[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let a = s[2 * i * w + 2 * j];
                let b = s[2 * i * w + 2 * j + 1];
                let c = s[(2 * i + 1) * w + 2 * j];
                let d = s[(2 * i + 1) * w + 2 * j + 1];
                data.push((a + b + c + d) * quarter);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trim_takes_the_center() {
        let x = Tensor::<f32>::from_fn(&[5, 5], |i| i as f32);
        let t = trim_border(&x, 1).unwrap();
        assert_eq!(t.shape(), &[3, 3]);
        assert_eq!(t.data(), &[6.0, 7.0, 8.0, 11.0, 12.0, 13.0, 16.0, 17.0, 18.0]);
        assert_eq!(trim_border(&x, 0).unwrap(), x);
        assert!(trim_border(&x, 3).is_err());
    }

    #[test]
    fn trim_17_on_128() {
        let x = Tensor::<f32>::from_fn(&[2, 128, 128], |i| i as f32);
        let t = trim_border(&x, 17).unwrap();
        assert_eq!(t.shape(), &[2, 94, 94]);
        for p in 0..2 {
            for i in 0..94 {
                for j in 0..94 {
                    assert_eq!(t.at(&[p, i, j]), x.at(&[p, i + 17, j + 17]));
                }
            }
        }
    }

    #[test]
    fn downsample_block_means() {
        let c = Tensor::<f64>::full(&[4, 6], 0.3);
        assert!(downsample2_avg(&c).unwrap().data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let x = Tensor::<f64>::new(&[2, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(downsample2_avg(&x).unwrap().data(), &[0.0]);
        assert!(downsample2_avg(&Tensor::<f64>::zeros(&[3, 4])).is_err());
    }

    #[test]
    fn center_crop_rounds_down() {
        let x = Tensor::<f32>::from_fn(&[5, 6], |i| i as f32);
        let c = center_crop(&x, 2).unwrap();
        // offsets (1, 2)
        assert_eq!(c.data(), &[8.0, 9.0, 14.0, 15.0]);
    }
}
