use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::Parameters;

/// Bias-corrected Adam state. Moments are allocated on the first step, shaped
/// like the visited parameter arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` from `grads` (same container type and shape).
///
/// Every gradient is checked before anything is written, so a non-finite
/// entry, or one whose square overflows the second moment, leaves both
/// parameters and state untouched.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    if state.lr < 0.0 || !state.lr.is_finite() {
        return Err(Error::Config(format!("invalid learning rate {}", state.lr)));
    }
    let mut bad: Option<String> = None;
    let mut shapes = Vec::new();
    grads.visit(&mut |name, g| {
        if bad.is_none() && g.iter().any(|x| !(x * x).is_finite()) {
            bad = Some(name.to_string());
        }
        shapes.push(g.len());
    });
    if let Some(param) = bad {
        return Err(Error::NonFiniteGradient { param });
    }
    if state.m.is_empty() {
        state.m = shapes.iter().map(|&n| vec![0.0; n]).collect();
        state.v = state.m.clone();
    } else if state.m.iter().map(Vec::len).ne(shapes.iter().copied()) {
        return Err(Error::shape("gradient layout changed between Adam steps"));
    }
    let flat_grads = grads.flatten();
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (ms, vs) = (&mut state.m, &mut state.v);
    let mut idx = 0;
    let mut offset = 0;
    params.visit_mut(&mut |_, p| {
        let g = &flat_grads[offset..offset + p.len()];
        let m = &mut ms[idx];
        let v = &mut vs[idx];
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
        offset += p.len();
        idx += 1;
    });
    Ok(())
}
