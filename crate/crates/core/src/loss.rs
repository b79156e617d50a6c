//! Maximum-likelihood objectives for mixture outputs.
//!
//! With per-component terms `c_i = ln ω_i + ln p_i(x)`:
//!
//! | kind              | per-sample value        |
//! |-------------------|-------------------------|
//! | `ExactNll`        | `−ln Σ_i exp(c_i)`      |
//! | `PaperSurrogate`  | `−Σ_i c_i`              |
//! | `WeightedJensen`  | `−Σ_i ω_i c_i`          |
//!
//! All three coincide for a single component. `WeightedJensen` is an upper
//! bound on the exact NLL for every input; `PaperSurrogate` is one only when
//! every `c_i ≤ 0` (unnormalized densities).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autonet::{CovarianceMode, HeadLayout, NodeId, Tape};
use crate::error::{MdnError, Result};
use crate::gmm::{component_terms, log_sum_exp, GaussianMixture};
use crate::linalg::DenseMatrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ExactNll,
    PaperSurrogate,
    WeightedJensen,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::ExactNll, LossKind::PaperSurrogate, LossKind::WeightedJensen];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::ExactNll => "exact_nll",
            LossKind::PaperSurrogate => "paper_surrogate",
            LossKind::WeightedJensen => "weighted_jensen",
        })
    }
}

impl FromStr for LossKind {
    type Err = MdnError;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| {
                MdnError::InvalidInput(format!(
                    "unknown loss `{s}` (expected exact_nll, paper_surrogate or weighted_jensen)"
                ))
            })
    }
}

/// Batch loss: mean over samples plus the per-sample values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub total: T,
    pub per_sample: Vec<T>,
}

impl<T: Real> LossValue<T> {
    /// Mean taken in ascending sample order.
    pub fn from_per_sample(per_sample: Vec<T>) -> Self {
        let total = per_sample.iter().fold(T::zero(), |a, &b| a + b) / T::lit(per_sample.len() as f64);
        Self { total, per_sample }
    }

    pub(crate) fn from_parts(total: T, per_sample: Vec<T>) -> Self {
        Self { total, per_sample }
    }
}

fn require_interior_weights<T: Real>(weights: &[T]) -> Result<()> {
    if weights.iter().any(|&w| w <= T::zero()) {
        return Err(MdnError::InvalidParams(
            "bound objectives need strictly positive weights (ln ω undefined)".into(),
        ));
    }
    Ok(())
}

/// Loss of `kind` for one sample, optionally without the `(N/2)·ln 2π` constant.
pub fn evaluate<T: Real, P: GaussianMixture<T> + ?Sized>(kind: LossKind, x: &[T], p: &P, normalized: bool) -> Result<T> {
    if kind != LossKind::ExactNll {
        require_interior_weights(p.weights())?;
    }
    let c = component_terms(x, p, normalized)?;
    Ok(match kind {
        LossKind::ExactNll => -log_sum_exp(&c),
        LossKind::PaperSurrogate => -c.iter().fold(T::zero(), |a, &b| a + b),
        LossKind::WeightedJensen => -c
            .iter()
            .zip(p.weights())
            .fold(T::zero(), |a, (&ci, &w)| a + w * ci),
    })
}

/// `−ln p(x)`, normalized.
pub fn exact_nll<T: Real, P: GaussianMixture<T> + ?Sized>(x: &[T], p: &P) -> Result<T> {
    evaluate(LossKind::ExactNll, x, p, true)
}

/// `−Σ_i (ln ω_i + ln p_i(x))`, normalized per component.
pub fn surrogate_bound<T: Real, P: GaussianMixture<T> + ?Sized>(x: &[T], p: &P) -> Result<T> {
    evaluate(LossKind::PaperSurrogate, x, p, true)
}

/// `−Σ_i ω_i (ln ω_i + ln p_i(x))`, normalized.
pub fn weighted_jensen<T: Real, P: GaussianMixture<T> + ?Sized>(x: &[T], p: &P) -> Result<T> {
    evaluate(LossKind::WeightedJensen, x, p, true)
}

/// Per-sample losses for paired points and mixtures, averaged in order.
pub fn batch_loss<T: Real, P: GaussianMixture<T>>(xs: &[Vec<T>], params: &[P], kind: LossKind) -> Result<LossValue<T>> {
    if xs.is_empty() {
        return Err(MdnError::InvalidInput("batch must contain at least one sample".into()));
    }
    if xs.len() != params.len() {
        return Err(MdnError::shape("batch parameters", xs.len(), params.len()));
    }
    let per = xs
        .iter()
        .zip(params)
        .map(|(x, p)| evaluate(kind, x, p, true))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossValue::from_per_sample(per))
}

/// Records the per-sample loss (`B × 1`) of head rows `head` against `targets` on `tape`.
pub fn record_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    head: NodeId,
    targets: &DenseMatrix<T>,
    layout: HeadLayout,
    kind: LossKind,
    normalized: bool,
) -> Result<NodeId> {
    let HeadLayout { k, n, mode } = layout;
    if tape.value(head).cols() != layout.head_dim() {
        return Err(MdnError::shape("network head", layout.head_dim(), tape.value(head).cols()));
    }
    let logits = tape.columns(head, 0, k)?;
    let log_w = tape.log_softmax(logits);
    let means = tape.columns(head, layout.means_offset(), k * n)?;
    let cov = tape.columns(head, layout.cov_offset(), k * layout.cov_block())?;
    let resid = tape.residual(targets, means, n)?;

    let (z, log_det) = match mode {
        CovarianceMode::Full => {
            let factor = tape.exp_tri_diag(cov, n)?;
            (tape.tri_matvec(factor, resid, n)?, tape.tri_diag_sum(cov, n)?)
        }
        CovarianceMode::Diagonal => {
            let scales = tape.exp_clamped(cov);
            (tape.mul(resid, scales)?, tape.group_sum_clamped(cov, n)?)
        }
    };
    let half_sq = tape.group_half_sq_norm(z, n)?;
    let mut log_p = tape.sub(log_det, half_sq)?;
    if normalized {
        let c = -(T::lit(0.5) * T::lit(n as f64) * T::ln_two_pi());
        log_p = tape.add_scalar(log_p, c);
    }
    let terms = tape.add(log_w, log_p)?;
    let objective = match kind {
        LossKind::ExactNll => tape.row_log_sum_exp(terms),
        LossKind::PaperSurrogate => tape.row_sum(terms),
        LossKind::WeightedJensen => {
            let w = tape.exp(log_w);
            tape.row_dot(w, terms)?
        }
    };
    Ok(tape.neg(objective))
}

/// Loss for a single head row and its gradient with respect to `[logits | means | covariance block]`.
pub fn head_loss_gradient<T: Real>(
    layout: HeadLayout,
    kind: LossKind,
    head: &[T],
    x: &[T],
    normalized: bool,
) -> Result<(T, Vec<T>)> {
    let mut tape = Tape::detached();
    let h = tape.leaf(DenseMatrix::new(1, head.len(), head.to_vec())?, true);
    let targets = DenseMatrix::new(1, x.len(), x.to_vec())?;
    let per = record_loss(&mut tape, h, &targets, layout, kind, normalized)?;
    let value = tape.value(per).get(0, 0);
    let grads = tape.backward(per, T::one())?;
    let g = grads.leaf(h).expect("tracked head leaf").as_slice().to_vec();
    Ok((value, g))
}
