//! Adam with bias correction, and the step-halving learning-rate schedule.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate at `epoch` (0-based): `base` halved once for every
/// milestone `≤ epoch`.
pub fn lr_schedule(epoch: usize, base: f64, milestones: &[usize]) -> f64 {
    let halvings = milestones.iter().filter(|&&m| epoch >= m).count();
    base * 0.5f64.powi(halvings as i32)
}

/// Optimizer moments for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(lr / c1);
        let inv_c2 = T::from_f64_lossy(1.0 / c2);
        let eps = T::from_f64_lossy(self.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            p.expect_same_shape(g, "adam")?;
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = b1 * *mj + ob1 * gj;
                *vj = b2 * *vj + ob2 * gj * gj;
                *pj = *pj - step_size * *mj / ((*vj * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_cumulatively() {
        let ms = [50, 60, 70, 80, 90, 100];
        assert_eq!(lr_schedule(0, 3e-4, &ms), 3e-4);
        assert_eq!(lr_schedule(49, 3e-4, &ms), 3e-4);
        assert_eq!(lr_schedule(55, 3e-4, &ms), 1.5e-4);
        assert_eq!(lr_schedule(95, 3e-4, &ms), 3e-4 / 32.0);
        assert_eq!(lr_schedule(100, 3e-4, &ms), 3e-4 / 64.0);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![Tensor::<f32>::from_fn(&[5], |i| i as f32 - 2.0)];
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = vec![Tensor::zeros(&[5])];
        for _ in 0..20 {
            s.step(&mut p, &g, 1e-2).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_bounded_by_lr() {
        let mut p = vec![Tensor::<f64>::zeros(&[4])];
        let g = vec![Tensor::new(&[4], vec![3.0, -0.01, 1e-3, -50.0]).unwrap()];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &g, 0.1).unwrap();
        for (&pj, &gj) in p[0].data().iter().zip(g[0].data()) {
            assert!(pj.abs() <= 0.1 * (1.0 + 1e-6));
            assert!(pj * gj < 0.0);
        }
    }

    #[test]
    fn quadratic_converges() {
        // f(p) = p², grad 2p
        let mut p = vec![Tensor::<f64>::full(&[1], 1.0)];
        let mut s = AdamState::new(&p);
        for _ in 0..500 {
            let g = vec![p[0].scale(2.0)];
            s.step(&mut p, &g, 0.1).unwrap();
        }
        assert!(p[0].data()[0].abs() < 1e-3, "{:?}", p[0]);
        assert!(s.v[0].data()[0] >= 0.0);
        assert_eq!(s.step, 500);
    }
}
