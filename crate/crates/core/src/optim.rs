//! Adam optimizer with per-parameter step counts and selective L2 decay.

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam hyperparameters. L2 decay applies only to parameters flagged as
/// convolutional kernels (added to the raw gradient, not decoupled).
#[derive(Debug, Clone, Copy)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub l2_decay: S,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, l2_decay: f64) -> Self {
        Adam {
            lr: S::from_f64(lr),
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
            l2_decay: S::from_f64(l2_decay),
        }
    }
}

/// First/second moment buffers plus a per-parameter step counter. Parameters
/// that receive no gradient in a step keep their counter unchanged, so bias
/// correction stays consistent for subnetworks that train on alternating
/// steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: Vec<u64>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Param<S>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![S::zero(); p.value.len()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.value.len()]).collect(),
            t: vec![0; params.len()],
        }
    }
}

impl<S: Scalar> Adam<S> {
    /// One optimizer step. `grads[i] = None` leaves parameter `i` (and its
    /// moments and counter) untouched.
    pub fn step(
        &self,
        params: &mut [Param<S>],
        grads: &[Option<Tensor<S>>],
        state: &mut AdamState<S>,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.t.len() {
            return Err(Error::config(format!(
                "optimizer step with misaligned lists: {} params, {} grads, {} states",
                params.len(),
                grads.len(),
                state.t.len()
            )));
        }
        let one = S::one();
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            if grad.shape() != param.value.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: param.value.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            state.t[i] += 1;
            let t = state.t[i] as i32;
            let bc1 = one - self.beta1.powi(t);
            let bc2 = one - self.beta2.powi(t);
            let decay = if param.conv_kernel { self.l2_decay } else { S::zero() };
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            for (((w, &g0), mi), vi) in param
                .value
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g0 + decay * *w;
                *mi = self.beta1 * *mi + (one - self.beta1) * g;
                *vi = self.beta2 * *vi + (one - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: Vec<f64>, conv: bool) -> Param<f64> {
        Param {
            name: "w".into(),
            value: Tensor::new(vec![values.len()], values).unwrap(),
            conv_kernel: conv,
        }
    }

    #[test]
    fn single_step_on_quadratic() {
        // f(w) = w² at w=1: g=2, m̂=2, v̂=4, so the update is lr·(2/2) = lr.
        let mut params = vec![param(vec![1.0], false)];
        let mut state = AdamState::new(&params);
        let adam = Adam::new(0.1, 0.0);
        let grads = vec![Some(Tensor::new(vec![1], vec![2.0]).unwrap())];
        adam.step(&mut params, &grads, &mut state).unwrap();
        assert!((params[0].value.as_slice()[0] - 0.9).abs() < 1e-9);
        assert_eq!(state.t[0], 1);
    }

    #[test]
    fn absent_gradient_is_a_fixed_point() {
        let mut params = vec![param(vec![1.5, -2.5], false)];
        let mut state = AdamState::new(&params);
        let adam = Adam::new(0.1, 0.0);
        adam.step(&mut params, &[None], &mut state).unwrap();
        assert_eq!(params[0].value.as_slice(), &[1.5, -2.5]);
        assert_eq!(state.t[0], 0);
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_fixed_point() {
        let mut params = vec![param(vec![1.5, -2.5], false)];
        let mut state = AdamState::new(&params);
        let adam = Adam::new(0.1, 0.0);
        let grads = vec![Some(Tensor::zeros(vec![2]))];
        adam.step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params[0].value.as_slice(), &[1.5, -2.5]);
    }

    #[test]
    fn decay_only_step_moves_against_sign() {
        // Zero loss gradient, decay 1e-6 on a conv kernel: the Adam recurrence
        // normalizes the tiny gradient, so the update is ≈ -sign(w)·lr.
        let lr = 0.1;
        let mut params = vec![param(vec![1.0, -3.0], true)];
        let mut state = AdamState::new(&params);
        let adam = Adam::new(lr, 1e-6);
        let grads = vec![Some(Tensor::zeros(vec![2]))];
        adam.step(&mut params, &grads, &mut state).unwrap();
        let w = params[0].value.as_slice();
        assert!((w[0] - (1.0 - lr)).abs() < 0.02 * lr, "got {}", w[0]);
        assert!((w[1] - (-3.0 + lr)).abs() < 0.02 * lr, "got {}", w[1]);
    }

    #[test]
    fn skipped_params_keep_their_own_schedule() {
        let mut params = vec![param(vec![1.0], false), param(vec![1.0], false)];
        let mut state = AdamState::new(&params);
        let adam = Adam::new(0.01, 0.0);
        let g = || Some(Tensor::new(vec![1], vec![0.5]).unwrap());
        adam.step(&mut params, &[g(), None], &mut state).unwrap();
        adam.step(&mut params, &[g(), g()], &mut state).unwrap();
        assert_eq!(state.t, vec![2, 1]);
    }

    #[test]
    fn misaligned_lists_are_rejected() {
        let mut params = vec![param(vec![1.0], false)];
        let mut state = AdamState::new(&params);
        let adam = Adam::new(0.1, 0.0);
        assert!(adam.step(&mut params, &[], &mut state).is_err());
    }
}
