use crate::error::{Error, Result};
use crate::nn::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One Adam update of `theta` in place.
pub fn adam_step<T: Real>(theta: &mut [T], grad: &[T], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if theta.len() != grad.len() || state.m.len() != theta.len() {
        return Err(Error::SizeMismatch(format!(
            "adam: {} parameters, {} gradients, {} moments",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!("adam step: gradient component {i} is not finite"), None));
    }
    state.step += 1;
    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
    let c1 = T::of(1.0 - BETA1.powi(state.step as i32));
    let c2 = T::of(1.0 - BETA2.powi(state.step as i32));
    let (lr, eps) = (T::of(lr), T::of(EPSILON));
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Exponential decay from `lr_init` at iteration 0 to `lr_final` at `total`.
pub fn lr_schedule(iteration: usize, total: usize, lr_init: f64, lr_final: f64) -> f64 {
    let frac = if total == 0 {
        1.0
    } else {
        iteration.min(total) as f64 / total as f64
    };
    lr_init * (lr_final / lr_init).powf(frac)
}
