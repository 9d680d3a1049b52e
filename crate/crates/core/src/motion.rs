//! Block-matching motion estimation and causal motion compensation.
//!
//! A displacement `(dy, dx)` for a block at `p` in the target frame means the
//! block's content came from `p − (dy, dx)` in the reference frame, so a
//! scene translating by `+v` per frame yields vectors equal to `v`.
//!
//! Estimation uses the two-pattern diamond search: the large diamond (centre
//! plus 8 points) is re-centred on the best candidate until the centre wins,
//! then a single small-diamond (centre plus 4 points) refinement is made.
//! Candidates whose reference block leaves the frame, or whose displacement
//! exceeds the search radius in either axis, are skipped. Among equal costs
//! the smaller `|dy|+|dx|` wins, then the earlier candidate in row-major
//! offset order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_BLOCK: usize = 8;
pub const DEFAULT_RADIUS: usize = 8;

const LARGE_DIAMOND: [(i32, i32); 8] = [
    (-2, 0),
    (-1, -1),
    (-1, 1),
    (0, -2),
    (0, 2),
    (1, -1),
    (1, 1),
    (2, 0),
];
const SMALL_DIAMOND: [(i32, i32); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

/// One integer displacement per block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotionField {
    pub rows: usize,
    pub cols: usize,
    pub block: usize,
    pub radius: usize,
    vectors: Vec<(i32, i32)>,
}

impl MotionField {
    /// A field with the same vector in every block.
    pub fn uniform(h: usize, w: usize, block: usize, radius: usize, v: (i32, i32)) -> Self {
        let rows = h.div_ceil(block);
        let cols = w.div_ceil(block);
        Self {
            rows,
            cols,
            block,
            radius,
            vectors: vec![v; rows * cols],
        }
    }

    pub fn from_vectors(
        h: usize,
        w: usize,
        block: usize,
        radius: usize,
        vectors: Vec<(i32, i32)>,
    ) -> Result<Self> {
        let mut f = Self::uniform(h, w, block, radius, (0, 0));
        if vectors.len() != f.vectors.len() {
            return Err(Error::shape(
                "MotionField",
                format!("{} vectors for a {}x{} block grid", vectors.len(), f.rows, f.cols),
            ));
        }
        f.vectors = vectors;
        Ok(f)
    }

    pub fn get(&self, block_row: usize, block_col: usize) -> (i32, i32) {
        self.vectors[block_row * self.cols + block_col]
    }

    pub fn vectors(&self) -> &[(i32, i32)] {
        &self.vectors
    }

    /// `block_row,block_col,dy,dx` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("block_row,block_col,dy,dx\n");
        for r in 0..self.rows {
            for c in 0..self.cols {
                let (dy, dx) = self.get(r, c);
                s.push_str(&format!("{r},{c},{dy},{dx}\n"));
            }
        }
        s
    }
}

fn frame_dims<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(Error::shape(op, format!("frame must be [H,W], got {:?}", t.shape()))),
    }
}

#[derive(Clone, Copy)]
struct BlockRect {
    y: usize,
    x: usize,
    h: usize,
    w: usize,
}

fn block_rect(br: usize, bc: usize, block: usize, h: usize, w: usize) -> BlockRect {
    let (y, x) = (br * block, bc * block);
    BlockRect {
        y,
        x,
        h: block.min(h - y),
        w: block.min(w - x),
    }
}

/// Mean squared difference between the target block and the reference block
/// displaced by `v`, or `None` when that reference block leaves the frame.
fn block_cost<T: Real>(
    reference: &Tensor<T>,
    target: &Tensor<T>,
    rect: BlockRect,
    v: (i32, i32),
) -> Option<f64> {
    let (h, w) = target.hw();
    let ry = rect.y as i64 - v.0 as i64;
    let rx = rect.x as i64 - v.1 as i64;
    if ry < 0 || rx < 0 || ry as usize + rect.h > h || rx as usize + rect.w > w {
        return None;
    }
    let (ry, rx) = (ry as usize, rx as usize);
    let (rd, td) = (reference.data(), target.data());
    let mut acc = 0.0f64;
    for i in 0..rect.h {
        let a = &rd[(ry + i) * w + rx..][..rect.w];
        let b = &td[(rect.y + i) * w + rect.x..][..rect.w];
        acc += a
            .iter()
            .zip(b)
            .map(|(&p, &q)| (p.as_f64() - q.as_f64()).powi(2))
            .sum::<f64>();
    }
    Some(acc / (rect.h * rect.w) as f64)
}

fn l1(v: (i32, i32)) -> i32 {
    v.0.abs() + v.1.abs()
}

/// Strict ordering used to accept a move: lower cost, then smaller |v|₁.
fn better(c: f64, v: (i32, i32), best_c: f64, best_v: (i32, i32)) -> bool {
    c < best_c || (c == best_c && l1(v) < l1(best_v))
}

/// Diamond descent from `start`; returns the final vector and its cost.
fn search_block<T: Real>(
    reference: &Tensor<T>,
    target: &Tensor<T>,
    rect: BlockRect,
    radius: i32,
    start: ((i32, i32), f64),
) -> ((i32, i32), f64) {
    let eval = |v: (i32, i32)| -> Option<f64> {
        if v.0.abs() > radius || v.1.abs() > radius {
            return None;
        }
        block_cost(reference, target, rect, v)
    };
    let step = |pattern: &[(i32, i32)], center: ((i32, i32), f64)| {
        let mut best = center;
        for &(oy, ox) in pattern {
            let v = (center.0 .0 + oy, center.0 .1 + ox);
            if let Some(c) = eval(v) {
                if better(c, v, best.1, best.0) {
                    best = (v, c);
                }
            }
        }
        best
    };
    let mut center = start;
    loop {
        let next = step(&LARGE_DIAMOND, center);
        if next.0 == center.0 {
            break;
        }
        center = next;
    }
    step(&SMALL_DIAMOND, center)
}

/// Diamond-search motion field from `reference` to `target`.
///
/// The first pass searches every block from the zero vector. Later passes
/// offer each block the vectors its four neighbours held in the previous
/// pass; if one of them beats the block's own match, the diamond search is
/// restarted from it. Passes repeat until the field stops changing. Every
/// pass reads only the previous field, so blocks stay independent within a
/// pass and the result does not depend on evaluation order.
pub fn diamond_search<T: Real>(
    reference: &Tensor<T>,
    target: &Tensor<T>,
    block: usize,
    radius: usize,
) -> Result<MotionField> {
    let (h, w) = frame_dims(target, "diamond_search")?;
    if reference.shape() != target.shape() {
        return Err(Error::shape(
            "diamond_search",
            format!("reference {:?} vs target {:?}", reference.shape(), target.shape()),
        ));
    }
    if block == 0 || block > h || block > w {
        return Err(Error::shape(
            "diamond_search",
            format!("block size {block} does not fit frame {h}x{w}"),
        ));
    }
    let mut field = MotionField::uniform(h, w, block, radius, (0, 0));
    let (rows, cols) = (field.rows, field.cols);
    let r = radius as i32;
    let rect_of = |i: usize| block_rect(i / cols, i % cols, block, h, w);
    let mut state: Vec<((i32, i32), f64)> = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let rect = rect_of(i);
            let c0 = block_cost(reference, target, rect, (0, 0))
                .expect("zero displacement is always in frame");
            search_block(reference, target, rect, r, ((0, 0), c0))
        })
        .collect();
    for _ in 0..rows + cols {
        let next: Vec<((i32, i32), f64)> = (0..rows * cols)
            .into_par_iter()
            .map(|i| {
                let (br, bc) = (i / cols, i % cols);
                let own = state[i];
                let mut best = own;
                let neighbours = [
                    (br > 0).then(|| i - cols),
                    (bc > 0).then(|| i - 1),
                    (bc + 1 < cols).then(|| i + 1),
                    (br + 1 < rows).then(|| i + cols),
                ];
                for n in neighbours.into_iter().flatten() {
                    let v = state[n].0;
                    if v.0.abs() > r || v.1.abs() > r {
                        continue;
                    }
                    if let Some(c) = block_cost(reference, target, rect_of(i), v) {
                        if better(c, v, best.1, best.0) {
                            best = (v, c);
                        }
                    }
                }
                if best.0 == own.0 {
                    own
                } else {
                    search_block(reference, target, rect_of(i), r, best)
                }
            })
            .collect();
        let changed = next.iter().zip(&state).any(|(a, b)| a.0 != b.0);
        state = next;
        if !changed {
            break;
        }
    }
    field.vectors = state.into_iter().map(|(v, _)| v).collect();
    Ok(field)
}

/// Per-block MSE of `field` between `reference` and `target`
/// (`None` where the displaced block leaves the frame).
pub fn block_residuals<T: Real>(
    reference: &Tensor<T>,
    target: &Tensor<T>,
    field: &MotionField,
) -> Result<Vec<Option<f64>>> {
    let (h, w) = frame_dims(target, "block_residuals")?;
    check_field(field, h, w)?;
    Ok((0..field.rows * field.cols)
        .map(|i| {
            let (r, c) = (i / field.cols, i % field.cols);
            block_cost(reference, target, block_rect(r, c, field.block, h, w), field.get(r, c))
        })
        .collect())
}

fn check_field(field: &MotionField, h: usize, w: usize) -> Result<()> {
    if field.block == 0 || field.rows != h.div_ceil(field.block) || field.cols != w.div_ceil(field.block)
    {
        return Err(Error::shape(
            "motion field",
            format!(
                "{}x{} blocks of {} do not cover frame {h}x{w}",
                field.rows, field.cols, field.block
            ),
        ));
    }
    Ok(())
}

/// Copies every block from `frame` at its displaced location; reads outside
/// the frame clamp to the nearest edge pixel.
pub fn compensate<T: Real>(frame: &Tensor<T>, field: &MotionField) -> Result<Tensor<T>> {
    let (h, w) = frame_dims(frame, "compensate")?;
    check_field(field, h, w)?;
    let mut out = Tensor::zeros(&[h, w]);
    let src = frame.data();
    for (i, row) in out.data_mut().chunks_mut(w).enumerate() {
        let br = i / field.block;
        for (j, px) in row.iter_mut().enumerate() {
            let (dy, dx) = field.get(br, j / field.block);
            let sy = (i as i64 - dy as i64).clamp(0, h as i64 - 1) as usize;
            let sx = (j as i64 - dx as i64).clamp(0, w as i64 - 1) as usize;
            *px = src[sy * w + sx];
        }
    }
    Ok(out)
}

/// Causal motion-compensated prediction of the frame after `cur`: the field
/// estimated from `prev` to `cur` is applied to `cur`.
pub fn cmc_predict<T: Real>(
    prev: &Tensor<T>,
    cur: &Tensor<T>,
    block: usize,
    radius: usize,
) -> Result<Tensor<T>> {
    let field = diamond_search(prev, cur, block, radius)?;
    compensate(cur, &field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[h, w], |i| {
            let (y, x) = ((i / w) as f32, (i % w) as f32);
            ((0.31 * y).sin() * (0.17 * x + 0.4).cos() + 0.2 * (0.05 * x * y).sin()) * 0.9
        })
    }

    fn cyclic_shift(x: &Tensor<f32>, dy: i32, dx: i32) -> Tensor<f32> {
        let (h, w) = x.hw();
        Tensor::from_fn(&[h, w], |i| {
            let (y, c) = ((i / w) as i32, (i % w) as i32);
            let sy = (y - dy).rem_euclid(h as i32) as usize;
            let sx = (c - dx).rem_euclid(w as i32) as usize;
            x.at(&[sy, sx])
        })
    }

    #[test]
    fn identical_frames_give_zero_field() {
        let x = ramp(32, 40);
        let f = diamond_search(&x, &x, 8, 8).unwrap();
        assert_eq!((f.rows, f.cols), (4, 5));
        assert!(f.vectors().iter().all(|&v| v == (0, 0)));
    }

    #[test]
    fn partial_edge_blocks_counted() {
        let x = ramp(20, 17);
        let f = diamond_search(&x, &x, 8, 8).unwrap();
        assert_eq!((f.rows, f.cols), (3, 3));
    }

    #[test]
    fn shifted_frame_recovers_shift_in_interior() {
        let x = ramp(48, 48);
        let y = cyclic_shift(&x, 3, 2);
        let f = diamond_search(&x, &y, 8, 8).unwrap();
        let res = block_residuals(&x, &y, &f).unwrap();
        for r in 1..f.rows - 1 {
            for c in 1..f.cols - 1 {
                assert_eq!(f.get(r, c), (3, 2), "block ({r},{c}) {}", f.to_csv());
                assert_eq!(res[r * f.cols + c], Some(0.0));
            }
        }
    }

    #[test]
    fn zero_field_compensation_is_identity() {
        let x = ramp(24, 24);
        let f = MotionField::uniform(24, 24, 8, 8, (0, 0));
        assert_eq!(compensate(&x, &f).unwrap(), x);
    }

    #[test]
    fn compensation_clamps_at_edges() {
        let x = Tensor::<f32>::from_fn(&[8, 8], |i| i as f32);
        let f = MotionField::uniform(8, 8, 8, 8, (2, 0));
        let y = compensate(&x, &f).unwrap();
        // rows 0 and 1 read row clamp(−2), clamp(−1) = 0
        assert_eq!(y.at(&[0, 3]), x.at(&[0, 3]));
        assert_eq!(y.at(&[1, 3]), x.at(&[0, 3]));
        assert_eq!(y.at(&[5, 3]), x.at(&[3, 3]));
    }

    #[test]
    fn block_larger_than_frame_rejected() {
        let x = ramp(6, 6);
        assert!(diamond_search(&x, &x, 8, 8).is_err());
        let y = ramp(6, 7);
        assert!(diamond_search(&x, &y, 2, 8).is_err());
    }

    #[test]
    fn csv_dump() {
        let f = MotionField::from_vectors(16, 8, 8, 8, vec![(1, -2), (0, 3)]).unwrap();
        assert_eq!(f.to_csv(), "block_row,block_col,dy,dx\n0,0,1,-2\n1,0,0,3\n");
        assert!(MotionField::from_vectors(16, 8, 8, 8, vec![(0, 0)]).is_err());
    }
}
