use crate::adcore::GradVector;
use crate::error::{Error, Result};
use crate::net::MLPParams;
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment vectors over the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub step: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![S::zero(); len], v: vec![S::zero(); len], step: 0 }
    }
}

/// `lr0 · (1 − epoch/epochs)`, clamped at zero.
pub fn learning_rate(lr0: f64, epoch: usize, epochs: usize) -> f64 {
    (lr0 * (1.0 - epoch as f64 / epochs as f64)).max(0.0)
}

/// One bias-corrected Adam step.
pub fn adam_update<S: Scalar>(
    params: &mut MLPParams<S>,
    state: &mut OptimizerState<S>,
    grads: &GradVector<S>,
    lr: S,
) -> Result<()> {
    let n = params.data.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Contract(format!(
            "adam shapes differ: params {n}, grads {}, state {}/{}",
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.step += 1;
    let (b1, b2, eps) = (S::lit(BETA1), S::lit(BETA2), S::lit(ADAM_EPS));
    let k = state.step as i32;
    let c1 = S::one() - b1.powi(k);
    let c2 = S::one() - b2.powi(k);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (S::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (S::one() - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params.data[i] = params.data[i] - lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}
