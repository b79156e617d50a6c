//! Adaptive-moment optimizer and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::autonet::NetworkParams;
use crate::error::{MdnError, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: NetworkParams<T>,
    pub v: NetworkParams<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

fn check_same_shape<T: Real>(a: &NetworkParams<T>, b: &NetworkParams<T>) -> Result<()> {
    if a.layers.len() != b.layers.len() {
        return Err(MdnError::shape("gradient layer count", a.layers.len(), b.layers.len()));
    }
    for (x, y) in a.layers.iter().zip(&b.layers) {
        if x.weights.len() != y.weights.len() {
            return Err(MdnError::shape("gradient weight block", x.weights.len(), y.weights.len()));
        }
        if x.bias.len() != y.bias.len() {
            return Err(MdnError::shape("gradient bias block", x.bias.len(), y.bias.len()));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update of `params` in place.
///
/// Nothing is modified when a gradient entry is non-finite; the error names the block.
pub fn adam_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<()> {
    check_same_shape(params, grads)?;
    check_same_shape(params, &state.m)?;
    if let Some((name, _)) = grads.blocks().find(|(_, b)| b.iter().any(|g| !g.is_finite())) {
        return Err(MdnError::NonFiniteGradient { block: name });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
    let lr = T::lit(hyper.learning_rate);
    let eps = T::lit(hyper.epsilon);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let blocks = params
        .blocks_mut()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut().zip(state.v.blocks_mut()));
    for ((p, (_, g)), (m, v)) in blocks {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Euclidean norm over every gradient entry, accumulated in storage order.
pub fn global_norm<T: Real>(grads: &NetworkParams<T>) -> T {
    grads
        .blocks()
        .flat_map(|(_, b)| b.iter().copied())
        .fold(T::zero(), |a, g| a + g * g)
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut NetworkParams<T>, max_norm: T) -> T {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for block in grads.blocks_mut() {
            block.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
