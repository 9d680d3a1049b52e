//! Helpers shared by the integration tests. Each test binary uses a subset.
#![allow(dead_code)]

use polarpred::autodiff::{BnStats, Graph, Var};
use polarpred::data::dead_leaves;
use polarpred::polar::DEFAULT_EPS_AMP;
use polarpred::tensor::center_crop;
use polarpred::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Central `n×n` window of a 64×64 dead-leaves image.
pub fn natural_patch(rng: &mut impl Rng, n: usize) -> Tensor<f64> {
    center_crop(&dead_leaves(rng, 64, 64), n).unwrap().cast()
}

/// Periodic `n×n` texture: white noise under three cyclic 5×5 box blurs,
/// scaled to `[-1, 1]`. Smooth enough for block matching to have a basin
/// around the true displacement, rough enough that matches are unique.
pub fn smooth_texture(rng: &mut impl Rng, n: usize) -> Tensor<f64> {
    let mut x = normal(rng, &[n, n], 1.0);
    for _ in 0..3 {
        let mut acc = Tensor::zeros(&[n, n]);
        for dy in -2..=2 {
            for dx in -2..=2 {
                acc.axpy(1.0 / 25.0, &roll(&x, dy, dx)).unwrap();
            }
        }
        x = acc;
    }
    let m = x.max_abs();
    x.scale(1.0 / m)
}

/// Cyclic shift by `(dy, dx)`: content at `(i, j)` moves to `(i + dy, j + dx)`.
pub fn roll(x: &Tensor<f64>, dy: i64, dx: i64) -> Tensor<f64> {
    let (h, w) = x.hw();
    Tensor::from_fn(&[h, w], |k| {
        let (i, j) = ((k / w) as i64, (k % w) as i64);
        x.data()[((i - dy).rem_euclid(h as i64) * w as i64 + (j - dx).rem_euclid(w as i64)) as usize]
    })
}

/// Minimum block MSE over every in-frame displacement within `radius`.
pub fn exhaustive_block_min(a: &Tensor<f64>, b: &Tensor<f64>, block: usize, radius: i64, br: usize, bc: usize) -> f64 {
    let (h, w) = b.hw();
    let (y0, x0) = (br * block, bc * block);
    let (y1, x1) = ((y0 + block).min(h), (x0 + block).min(w));
    let mut best = f64::INFINITY;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            // target block at (y, x) matches reference at (y − dy, x − dx)
            let (sy, sx) = (y0 as i64 - dy, x0 as i64 - dx);
            if sy < 0 || sx < 0 || sy + (y1 - y0) as i64 > h as i64 || sx + (x1 - x0) as i64 > w as i64 {
                continue;
            }
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = b.data()[y * w + x] - a.data()[(y as i64 - dy) as usize * w + (x as i64 - dx) as usize];
                    s += d * d;
                }
            }
            best = best.min(s / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    best
}

/// `max|a − b| / max|b|`, the infinity-norm relative error of `a` against reference `b`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Central differences of `f` at `inputs`, one gradient per input.
pub fn numeric_grad(f: impl Fn(&[Tensor<f64>]) -> f64, inputs: &[Tensor<f64>], h: f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    (0..inputs.len())
        .map(|k| {
            (0..inputs[k].len())
                .map(|i| {
                    let x0 = work[k].data()[i];
                    work[k].data_mut()[i] = x0 + h;
                    let up = f(&work);
                    work[k].data_mut()[i] = x0 - h;
                    let down = f(&work);
                    work[k].data_mut()[i] = x0;
                    (up - down) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

/// One differentiable operation under test, reduced to a scalar by a fixed
/// random projection (or, for the loss, by itself).
#[derive(Clone, Debug)]
pub enum OpCase {
    Conv,
    ConvTranspose,
    Relu,
    BatchNorm { centered: bool },
    PhaseAdvance { eps: f64 },
    LinearExtrapolate,
    Loss { target: Tensor<f64>, margin: usize, trim: usize },
}

impl OpCase {
    pub fn name(&self) -> &'static str {
        match self {
            OpCase::Conv => "conv",
            OpCase::ConvTranspose => "conv_transpose",
            OpCase::Relu => "relu",
            OpCase::BatchNorm { .. } => "batchnorm_scale",
            OpCase::PhaseAdvance { .. } => "phase_advance",
            OpCase::LinearExtrapolate => "linear_extrapolate",
            OpCase::Loss { .. } => "loss",
        }
    }
}

/// Scalar value of `case` on `inputs` and, when `grads`, the gradients
/// with respect to every input.
pub fn eval_case<T: Real>(
    case: &OpCase,
    inputs: &[Tensor<f64>],
    proj: &Tensor<f64>,
    grads: bool,
) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.cast())).collect();
    let out = match case {
        OpCase::Conv => g.conv2d(vars[0], vars[1]).unwrap(),
        OpCase::ConvTranspose => g.conv2d_transpose(vars[0], vars[1]).unwrap(),
        OpCase::Relu => g.relu(vars[0]),
        OpCase::BatchNorm { centered } => {
            g.batchnorm_scale(vars[0], vars[1], *centered, T::from_f64_lossy(1e-5), BnStats::Batch)
                .unwrap()
                .0
        }
        OpCase::PhaseAdvance { eps } => g.phase_advance(vars[0], vars[1], T::from_f64_lossy(*eps)).unwrap(),
        OpCase::LinearExtrapolate => g.linear_extrapolate(vars[0], vars[1]).unwrap(),
        OpCase::Loss { target, margin, trim } => g.trimmed_mse(vars[0], &target.cast(), *margin, *trim).unwrap(),
    };
    let loss = match case {
        OpCase::Loss { .. } => out,
        _ => g.weighted_sum(out, &proj.cast()).unwrap(),
    };
    let value = g.value(loss).item().unwrap().as_f64();
    if !grads {
        return (value, Vec::new());
    }
    let gr = g.backward(loss).unwrap();
    let gs = vars
        .iter()
        .map(|&v| gr.wrt(v).data().iter().map(|x| x.as_f64()).collect())
        .collect();
    (value, gs)
}

/// Output shape of `case`, for sizing the projection.
pub fn out_shape(case: &OpCase, inputs: &[Tensor<f64>]) -> Vec<usize> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = match case {
        OpCase::Conv => g.conv2d(vars[0], vars[1]).unwrap(),
        OpCase::ConvTranspose => g.conv2d_transpose(vars[0], vars[1]).unwrap(),
        OpCase::Loss { .. } => return vec![1],
        _ => vars[0],
    };
    g.value(out).shape().to_vec()
}

/// Random instance `index` of `case`: its inputs and projection.
pub fn instance(name: &str, index: u64) -> (OpCase, Vec<Tensor<f64>>, Tensor<f64>) {
    let mut r = rng(0xD1FF ^ (index << 8) ^ name.len() as u64);
    let b = r.random_range(1..=2);
    let (ci, co, k) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=4));
    let (h, w) = (k + r.random_range(0..=4), k + r.random_range(0..=4));
    let (case, inputs) = match name {
        "conv" => (OpCase::Conv, vec![normal(&mut r, &[b, ci, h, w], 1.0), normal(&mut r, &[co, ci, k, k], 1.0)]),
        "conv_transpose" => (
            OpCase::ConvTranspose,
            vec![normal(&mut r, &[b, co, h, w], 1.0), normal(&mut r, &[co, ci, k, k], 1.0)],
        ),
        "relu" => {
            // keep inputs away from the kink so central differences are exact
            let x = normal(&mut r, &[b, ci, h, w], 1.0).map(|v| if v.abs() < 0.05 { v + 0.1 * v.signum() } else { v });
            (OpCase::Relu, vec![x])
        }
        "batchnorm_scale" => {
            let c = r.random_range(1..=3);
            let x = normal(&mut r, &[b, c, h.max(2), w.max(2)], 1.5).map(|v| v + 0.3);
            let gamma = Tensor::from_fn(&[c], |_| r.random_range(0.5..2.0));
            (OpCase::BatchNorm { centered: index % 2 == 1 }, vec![x, gamma])
        }
        "phase_advance" => {
            let kk = r.random_range(1..=3);
            // every other instance includes near-zero amplitudes
            let scale = if index % 2 == 0 { 1.0 } else { 0.02 };
            let zt = normal(&mut r, &[b, 2 * kk, h, w], scale);
            let zm = normal(&mut r, &[b, 2 * kk, h, w], scale);
            (OpCase::PhaseAdvance { eps: DEFAULT_EPS_AMP }, vec![zt, zm])
        }
        "linear_extrapolate" => (
            OpCase::LinearExtrapolate,
            vec![normal(&mut r, &[b, ci, h, w], 1.0), normal(&mut r, &[b, ci, h, w], 1.0)],
        ),
        "loss" => {
            let margin = r.random_range(0..=2);
            let (th, tw) = (h + 2 * margin + 4, w + 2 * margin + 4);
            let pred = normal(&mut r, &[b, 1, th - 2 * margin, tw - 2 * margin], 1.0);
            let target = normal(&mut r, &[b, 1, th, tw], 1.0);
            let trim = r.random_range(0..=margin + 1);
            (OpCase::Loss { target, margin, trim }, vec![pred])
        }
        other => panic!("unknown op {other}"),
    };
    let proj = normal(&mut r, &out_shape(&case, &inputs), 1.0);
    (case, inputs, proj)
}

pub const GRAD_OPS: [&str; 7] = [
    "conv",
    "conv_transpose",
    "relu",
    "batchnorm_scale",
    "phase_advance",
    "linear_extrapolate",
    "loss",
];

/// Worst relative error over all inputs of one instance: analytic gradients
/// in `T` against central differences of the same op evaluated in f64.
pub fn grad_error<T: Real>(case: &OpCase, inputs: &[Tensor<f64>], proj: &Tensor<f64>) -> f64 {
    let (_, analytic) = eval_case::<T>(case, inputs, proj, true);
    let numeric = numeric_grad(|x| eval_case::<f64>(case, x, proj, false).0, inputs, 1e-6);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(a, n))
        .fold(0.0, f64::max)
}
