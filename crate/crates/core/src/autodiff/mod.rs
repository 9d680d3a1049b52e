//! Reverse-mode differentiation over the small, fixed set of operations the
//! predictors use.
//!
//! A [`Graph`] is a tape: nodes are appended in evaluation order, which is
//! also a topological order, and [`Graph::backward`] walks it once in reverse.
//! A graph is built per training step and dropped afterwards.

mod optim;

pub use optim::{lr_schedule, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::error::{Error, Result};
use crate::polar;
use crate::tensor::{conv2d_kernel_grad, conv2d_transpose, conv2d_valid, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Normalization statistics used by [`Graph::batchnorm_scale`].
#[derive(Clone, Debug)]
pub enum BnStats<T: Real> {
    /// Per-channel statistics of the current batch; gradients flow through them.
    Batch,
    /// Stored running statistics (inference); treated as constants.
    Fixed { mean: Vec<T>, var: Vec<T> },
}

/// Per-channel statistics measured by a batch-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchMoments<T: Real> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T: Real> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        k: usize,
    },
    ConvTranspose {
        y: Var,
        w: Var,
        k: usize,
    },
    Relu {
        x: Var,
    },
    BatchNormScale {
        x: Var,
        gamma: Var,
        centered: bool,
        batch_stats: bool,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    PhaseAdvance {
        zt: Var,
        zm: Var,
        eps: T,
    },
    LinearExtrapolate {
        cur: Var,
        prev: Var,
    },
    SelectBatch {
        x: Var,
        indices: Vec<usize>,
    },
    TrimmedMse {
        pred: Var,
        target: Tensor<T>,
        pred_margin: usize,
        margin: usize,
    },
    HalfSumSquares {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Evaluation tape.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.axpy(T::one(), &g).expect("gradient slots match value shapes"),
        None => *slot = Some(g),
    }
}

/// Spatial window compared by a trimmed loss: `(pred_offset, target_offset, h, w)`.
pub fn trimmed_window(
    target_hw: (usize, usize),
    pred_hw: (usize, usize),
    pred_margin: usize,
    trim: usize,
) -> Result<(usize, usize, usize, usize)> {
    let (h, w) = target_hw;
    if pred_hw.0 + 2 * pred_margin != h || pred_hw.1 + 2 * pred_margin != w {
        return Err(Error::shape(
            "prediction_loss",
            format!(
                "prediction {}x{} with margin {pred_margin} does not tile target {h}x{w}",
                pred_hw.0, pred_hw.1
            ),
        ));
    }
    let m = trim.max(pred_margin);
    if 2 * m >= h || 2 * m >= w {
        return Err(Error::shape(
            "prediction_loss",
            format!("margin {m} leaves no pixels of {h}x{w}"),
        ));
    }
    Ok((m - pred_margin, m, h - 2 * m, w - 2 * m))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = conv2d_valid(self.value(x), self.value(w))?;
        let k = self.value(w).shape()[3];
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Conv { x, w, k }, needs))
    }

    pub fn conv2d_transpose(&mut self, y: Var, w: Var) -> Result<Var> {
        let out = conv2d_transpose(self.value(y), self.value(w))?;
        let k = self.value(w).shape()[3];
        let needs = self.needs(y) || self.needs(w);
        Ok(self.push(out, Op::ConvTranspose { y, w, k }, needs))
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(out, Op::Relu { x }, needs)
    }

    /// Per-channel rescaling `γ_c · x / sqrt(var_c + eps)` over a `[B,C,H,W]` input.
    ///
    /// The variance is always measured about the channel mean. With
    /// `centered` the mean is also subtracted from the output; otherwise the
    /// layer has no additive term. Returns the measured moments in batch mode.
    pub fn batchnorm_scale(
        &mut self,
        x: Var,
        gamma: Var,
        centered: bool,
        eps: T,
        stats: BnStats<T>,
    ) -> Result<(Var, Option<BatchMoments<T>>)> {
        const OP: &str = "batchnorm_scale";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        if self.value(gamma).shape() != [c] {
            return Err(Error::shape(
                OP,
                format!("gamma shape {:?}, expected [{c}]", self.value(gamma).shape()),
            ));
        }
        let n = b * h * w;
        let plane = h * w;
        let (mean, var, batch_stats) = match stats {
            BnStats::Batch => {
                if n < 2 {
                    return Err(Error::shape(OP, format!("B·H·W = {n} < 2")));
                }
                let xs = self.value(x).data();
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for bi in 0..b {
                        s += xs[(bi * c + ch) * plane..][..plane]
                            .iter()
                            .map(|v| v.as_f64())
                            .sum::<f64>();
                    }
                    let mu = s / n as f64;
                    let mut q = 0.0f64;
                    for bi in 0..b {
                        q += xs[(bi * c + ch) * plane..][..plane]
                            .iter()
                            .map(|v| (v.as_f64() - mu).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = T::from_f64_lossy(mu);
                    var[ch] = T::from_f64_lossy(q / n as f64);
                }
                (mean, var, true)
            }
            BnStats::Fixed { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(OP, "running statistics length != C"));
                }
                (mean, var, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gam = self.value(gamma).data().to_vec();
        let xs = self.value(x);
        let mut out = Tensor::zeros(xs.shape());
        for bi in 0..b {
            for ch in 0..c {
                let s = gam[ch] * inv_std[ch];
                let shift = if centered { mean[ch] } else { T::zero() };
                let src = &xs.data()[(bi * c + ch) * plane..][..plane];
                let dst = &mut out.data_mut()[(bi * c + ch) * plane..][..plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = (v - shift) * s;
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma);
        let moments = batch_stats.then(|| BatchMoments {
            mean: mean.clone(),
            var,
        });
        let v = self.push(
            out,
            Op::BatchNormScale {
                x,
                gamma,
                centered,
                batch_stats,
                mean,
                inv_std,
            },
            needs,
        );
        Ok((v, moments))
    }

    /// Phase advance on paired real channels `[B,2K,H,W]`.
    pub fn phase_advance(&mut self, zt: Var, zm: Var, eps: T) -> Result<Var> {
        let out = polar::phase_advance_channels(self.value(zt), self.value(zm), eps)?;
        let needs = self.needs(zt) || self.needs(zm);
        Ok(self.push(out, Op::PhaseAdvance { zt, zm, eps }, needs))
    }

    /// `2·cur − prev`.
    pub fn linear_extrapolate(&mut self, cur: Var, prev: Var) -> Result<Var> {
        let out = polar::linear_extrapolate(self.value(cur), self.value(prev))?;
        let needs = self.needs(cur) || self.needs(prev);
        Ok(self.push(out, Op::LinearExtrapolate { cur, prev }, needs))
    }

    /// Gathers items of the leading (batch) axis.
    pub fn select_batch(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let n = *src
            .shape()
            .first()
            .ok_or_else(|| Error::shape("select_batch", "scalar input"))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape(
                "select_batch",
                format!("index {bad} out of range for batch of {n}"),
            ));
        }
        let parts: Vec<_> = indices.iter().map(|&i| src.index_axis0(i)).collect();
        let out = Tensor::stack(&parts)?;
        let needs = self.needs(x);
        Ok(self.push(
            out,
            Op::SelectBatch {
                x,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    /// Mean squared error between a prediction and a constant target over
    /// the central region left after trimming `trim` pixels per side.
    ///
    /// `pred_margin` is the number of border pixels the prediction lost to
    /// valid convolutions; the comparison window is the larger of the two
    /// margins.
    pub fn trimmed_mse(
        &mut self,
        pred: Var,
        target: &Tensor<T>,
        pred_margin: usize,
        trim: usize,
    ) -> Result<Var> {
        let p = self.value(pred);
        let (pb, pc, ph, pw) = p.dims4("trimmed_mse")?;
        let (tb, tc, th, tw) = target.dims4("trimmed_mse")?;
        if pb != tb || pc != tc {
            return Err(Error::shape(
                "trimmed_mse",
                format!("prediction {:?} vs target {:?}", p.shape(), target.shape()),
            ));
        }
        let (po, to, rh, rw) = trimmed_window((th, tw), (ph, pw), pred_margin, trim)?;
        let mut acc = 0.0f64;
        for plane in 0..pb * pc {
            for i in 0..rh {
                let pr = &p.data()[plane * ph * pw + (po + i) * pw + po..][..rw];
                let tr = &target.data()[plane * th * tw + (to + i) * tw + to..][..rw];
                acc += pr
                    .iter()
                    .zip(tr)
                    .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
                    .sum::<f64>();
            }
        }
        let loss = acc / (pb * pc * rh * rw) as f64;
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(T::from_f64_lossy(loss)),
            Op::TrimmedMse {
                pred,
                target: target.clone(),
                pred_margin,
                margin: to,
            },
            needs,
        ))
    }

    /// `½‖x‖²`
    pub fn half_sum_squares(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64().powi(2)).sum();
        let needs = self.needs(x);
        self.push(
            Tensor::scalar(T::from_f64_lossy(0.5 * s)),
            Op::HalfSumSquares { x },
            needs,
        )
    }

    /// `Σ weights ⊙ x` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let s = self.value(x).dot(weights)?;
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::scalar(T::from_f64_lossy(s)),
            Op::WeightedSum {
                x,
                weights: weights.clone(),
            },
            needs,
        ))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, k } => {
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], conv2d_transpose(g, self.value(*w))?);
                }
                if self.needs(*w) {
                    let xv = batched(self.value(*x));
                    let dw = conv2d_kernel_grad(&xv, &batched(g), *k)?;
                    accumulate(&mut grads[w.0], dw);
                }
            }
            Op::ConvTranspose { y, w, k } => {
                if self.needs(*y) {
                    accumulate(&mut grads[y.0], conv2d_valid(g, self.value(*w))?);
                }
                if self.needs(*w) {
                    let dw = conv2d_kernel_grad(&batched(g), &batched(self.value(*y)), *k)?;
                    accumulate(&mut grads[w.0], dw);
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let gx = g.zip_map(xv, |gi, xi| if xi > T::zero() { gi } else { T::zero() })?;
                accumulate(&mut grads[x.0], gx);
            }
            Op::BatchNormScale {
                x,
                gamma,
                centered,
                batch_stats,
                mean,
                inv_std,
            } => {
                let (gx, ggamma) = self.batchnorm_backward(
                    self.value(*x),
                    self.value(*gamma),
                    g,
                    *centered,
                    *batch_stats,
                    mean,
                    inv_std,
                );
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], gx);
                }
                if self.needs(*gamma) {
                    accumulate(&mut grads[gamma.0], ggamma);
                }
            }
            Op::PhaseAdvance { zt, zm, eps } => {
                let (gt, gm) = polar::phase_advance_channels_backward(
                    self.value(*zt),
                    self.value(*zm),
                    *eps,
                    g,
                )?;
                if self.needs(*zt) {
                    accumulate(&mut grads[zt.0], gt);
                }
                if self.needs(*zm) {
                    accumulate(&mut grads[zm.0], gm);
                }
            }
            Op::LinearExtrapolate { cur, prev } => {
                if self.needs(*cur) {
                    accumulate(&mut grads[cur.0], g.scale(T::from_f64_lossy(2.0)));
                }
                if self.needs(*prev) {
                    accumulate(&mut grads[prev.0], g.scale(-T::one()));
                }
            }
            Op::SelectBatch { x, indices } => {
                let xv = self.value(*x);
                let inner: usize = xv.shape()[1..].iter().product();
                let mut gx = Tensor::zeros(xv.shape());
                for (slot, &src) in indices.iter().enumerate() {
                    let dst = &mut gx.data_mut()[src * inner..][..inner];
                    for (d, &v) in dst.iter_mut().zip(&g.data()[slot * inner..][..inner]) {
                        *d = *d + v;
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::TrimmedMse {
                pred,
                target,
                pred_margin,
                margin,
            } => {
                let p = self.value(*pred);
                let (pb, pc, ph, pw) = p.dims4("trimmed_mse")?;
                let (_, _, th, tw) = target.dims4("trimmed_mse")?;
                let po = margin - pred_margin;
                let (rh, rw) = (th - 2 * margin, tw - 2 * margin);
                let scale = g.data()[0] * T::from_f64_lossy(2.0 / (pb * pc * rh * rw) as f64);
                let mut gp = Tensor::zeros(p.shape());
                for plane in 0..pb * pc {
                    for i in 0..rh {
                        let po_i = plane * ph * pw + (po + i) * pw + po;
                        let to_i = plane * th * tw + (margin + i) * tw + margin;
                        for j in 0..rw {
                            gp.data_mut()[po_i + j] =
                                scale * (p.data()[po_i + j] - target.data()[to_i + j]);
                        }
                    }
                }
                accumulate(&mut grads[pred.0], gp);
            }
            Op::HalfSumSquares { x } => {
                let s = g.data()[0];
                accumulate(&mut grads[x.0], self.value(*x).scale(s));
            }
            Op::WeightedSum { x, weights } => {
                accumulate(&mut grads[x.0], weights.scale(g.data()[0]));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm_backward(
        &self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        g: &Tensor<T>,
        centered: bool,
        batch_stats: bool,
        mean: &[T],
        inv_std: &[T],
    ) -> (Tensor<T>, Tensor<T>) {
        let shape = x.shape();
        let (b, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        let n = (b * plane) as f64;
        let mut gx = Tensor::zeros(shape);
        let mut ggamma = Tensor::zeros(&[c]);
        for ch in 0..c {
            let mu = mean[ch].as_f64();
            let s = inv_std[ch].as_f64();
            let gam = gamma.data()[ch].as_f64();
            // Σ g·(x−μ) and Σ g, Σ g·x over the channel
            let (mut sum_g, mut sum_gxc, mut sum_gx) = (0.0f64, 0.0f64, 0.0f64);
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                for i in 0..plane {
                    let gi = g.data()[off + i].as_f64();
                    let xi = x.data()[off + i].as_f64();
                    sum_g += gi;
                    sum_gxc += gi * (xi - mu);
                    sum_gx += gi * xi;
                }
            }
            ggamma.data_mut()[ch] = T::from_f64_lossy(if centered { sum_gxc * s } else { sum_gx * s });
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                for i in 0..plane {
                    let gi = g.data()[off + i].as_f64();
                    let xc = x.data()[off + i].as_f64() - mu;
                    let v = if !batch_stats {
                        gam * s * gi
                    } else if centered {
                        gam * s * (gi - sum_g / n - xc * s * s * sum_gxc / n)
                    } else {
                        gam * s * (gi - xc * s * s * sum_gx / n)
                    };
                    gx.data_mut()[off + i] = T::from_f64_lossy(v);
                }
            }
        }
        (gx, ggamma)
    }
}

/// Views an unbatched `[C,H,W]` tensor as `[1,C,H,W]`.
fn batched<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    if t.rank() == 3 {
        let mut s = vec![1];
        s.extend_from_slice(t.shape());
        t.clone().reshape(&s).expect("same element count")
    } else {
        t.clone()
    }
}
