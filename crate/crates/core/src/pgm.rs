//! 8-bit binary PGM (`P5`) images of frames, error maps and filter mosaics.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Gray {
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.pixels.len() + 16);
        self.write(&mut v).expect("writing to memory");
        v
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn plane<T: Real>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    if x.rank() != 2 || x.is_empty() {
        return Err(Error::shape(op, format!("expected non-empty [H,W], got {:?}", x.shape())));
    }
    Ok(x.hw())
}

/// Maps `[-1, 1]` to `[0, 255]`; values outside are clipped.
pub fn frame_image<T: Real>(x: &Tensor<T>) -> Result<Gray> {
    let (h, w) = plane(x, "frame_image")?;
    Ok(Gray {
        width: w,
        height: h,
        pixels: x.data().iter().map(|v| quantize((v.as_f64() + 1.0) / 2.0)).collect(),
    })
}

/// `|x|` scaled so that `scale` maps to white.
pub fn error_image<T: Real>(x: &Tensor<T>, scale: f64) -> Result<Gray> {
    let (h, w) = plane(x, "error_image")?;
    let s = if scale > 0.0 { scale } else { 1.0 };
    Ok(Gray {
        width: w,
        height: h,
        pixels: x.data().iter().map(|v| quantize(v.as_f64().abs() / s)).collect(),
    })
}

/// Grid of `[C,1,k,k]` filters, `cols` per row, each scaled symmetrically
/// about mid-gray by its own largest magnitude, with 1-pixel black gutters.
pub fn filter_mosaic<T: Real>(weights: &Tensor<T>, cols: usize) -> Result<Gray> {
    let (c, cin, kh, kw) = weights.dims4("filter_mosaic")?;
    if cin != 1 || c == 0 || cols == 0 {
        return Err(Error::shape("filter_mosaic", format!("cannot tile {:?} in {cols} columns", weights.shape())));
    }
    let rows = c.div_ceil(cols);
    let (width, height) = (cols * (kw + 1) + 1, rows * (kh + 1) + 1);
    let mut pixels = vec![0u8; width * height];
    for ch in 0..c {
        let f = &weights.data()[ch * kh * kw..][..kh * kw];
        let m = f.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
        let (oy, ox) = (1 + (ch / cols) * (kh + 1), 1 + (ch % cols) * (kw + 1));
        for y in 0..kh {
            for x in 0..kw {
                let v = if m > 0.0 { f[y * kw + x].as_f64() / m } else { 0.0 };
                pixels[(oy + y) * width + ox + x] = quantize((v + 1.0) / 2.0);
            }
        }
    }
    Ok(Gray {
        width,
        height,
        pixels,
    })
}
