//! Adam with decoupled weight decay.
//!
//! Weight decay multiplies each parameter toward zero *before* the moment
//! update, so decay strength does not leak into the adaptive step size.

use super::Param;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Optimizer state: hyperparameters plus first/second moment buffers, one
/// pair per parameter, and a shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with the conventional betas (0.9, 0.999) and eps 1e-8.
    pub fn new(lr: T, weight_decay: T, params: &[Param<T>]) -> Self {
        AdamState {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            weight_decay,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            t: 0,
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter and consumes their gradients.
    ///
    /// The step counter increments once per call, not per parameter. A
    /// parameter without an accumulated gradient (no backward since the
    /// last step) is an error.
    pub fn step(&mut self, params: &[Param<T>]) -> Result<()> {
        assert_eq!(
            params.len(),
            self.m.len(),
            "optimizer was created for a different parameter list"
        );
        // Validate all gradients exist before mutating anything, so a
        // failed step leaves parameters untouched.
        for p in params {
            if p.borrow().grad().is_none() {
                return Err(CoreError::MissingGrad {
                    name: p.name().to_string(),
                });
            }
        }
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for (idx, p) in params.iter().enumerate() {
            let mut tensor = p.borrow_mut();
            let grad = tensor.take_grad().expect("validated above");
            let (data, _) = tensor.data_and_grad_mut();
            debug_assert_eq!(data.len(), self.m[idx].len());
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for j in 0..data.len() {
                let g = grad[j];
                // Decoupled decay first: plain shrink toward zero.
                data[j] -= self.lr * self.weight_decay * data[j];
                m[j] = self.beta1 * m[j] + (one - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (one - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
