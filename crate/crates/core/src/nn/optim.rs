use serde::{Deserialize, Serialize};

use super::{NetworkParams, Real};
use crate::error::{Error, Result};

/// Smooth L1 (Huber with threshold `beta`) of `y_hat - y`, and its
/// derivative with respect to `y_hat`.
pub fn smooth_l1(y_hat: f64, y: f64, beta: f64) -> (f64, f64) {
    debug_assert!(beta > 0.0);
    let d = y_hat - y;
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(params: &mut NetworkParams<T>, grads: &[T], state: &mut AdamState<T>) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Structural(format!(
            "adam lengths differ: params {n}, grads {}, moments {}/{}",
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.t += 1;
    let c = |x: f64| T::from(x).expect("finite");
    let (b1, b2) = (c(state.beta1), c(state.beta2));
    let (one_b1, one_b2) = (c(1.0 - state.beta1), c(1.0 - state.beta2));
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    // lr * mhat / (sqrt(vhat) + eps) with the corrections folded in
    let step = c(state.lr / bc1);
    let inv_sqrt_bc2 = c(1.0 / bc2.sqrt());
    let eps = c(state.eps);
    for (((p, &g), m), v) in params.values.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        *p = *p - step * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
    }
    Ok(())
}
