//! `PTN1` tensor snapshots: magic, u32 rank, u32 extents, little-endian f32 payload.

use std::io::{Read, Write};

use super::{Real, Tensor};
use crate::binio::{put_f32s, put_u32, OffsetReader};
use crate::error::Result;

pub const PTN1_MAGIC: &[u8; 4] = b"PTN1";

const MAX_RANK: u32 = 8;

/// Writes `t` rounded to f32.
pub fn write_ptn1<T: Real>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    w.write_all(PTN1_MAGIC)?;
    put_u32(w, t.rank() as u32)?;
    for &e in t.shape() {
        put_u32(w, e as u32)?;
    }
    put_f32s(w, t.data().iter().map(|v| v.as_f64() as f32))
}

pub fn read_ptn1(r: &mut impl Read) -> Result<Tensor<f32>> {
    let mut rd = OffsetReader::new(r, "PTN1");
    read_ptn1_from(&mut rd)
}

pub(crate) fn read_ptn1_from<R: Read>(rd: &mut OffsetReader<R>) -> Result<Tensor<f32>> {
    rd.magic(PTN1_MAGIC)?;
    let at = rd.offset();
    let rank = rd.u32()?;
    if rank > MAX_RANK {
        return Err(rd.error(at, format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(rd.u32()? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|&n| n <= 1 << 30)
        .ok_or_else(|| rd.error(at, format!("extents {shape:?} are too large")))?;
    let data = rd.f32s(n, |v, off| {
        if v.is_finite() {
            Ok(())
        } else {
            Err(crate::error::Error::Format {
                format: "PTN1",
                offset: off,
                reason: "non-finite value".into(),
            })
        }
    })?;
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32 * 0.5 - 3.0);
        let mut buf = Vec::new();
        write_ptn1(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"PTN1");
        assert_eq!(buf.len(), 4 + 4 + 12 + 24 * 4);
        assert_eq!(read_ptn1(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::<f32>::zeros(&[3]);
        let mut buf = Vec::new();
        write_ptn1(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 2);
        let e = read_ptn1(&mut buf.as_slice()).unwrap_err().to_string();
        assert!(e.contains("offset 22"), "{e}");
    }
}
