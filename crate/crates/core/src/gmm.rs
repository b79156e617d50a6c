//! Gaussian mixture densities with diagonal or full (precision-Cholesky) covariance.
//!
//! Log-densities are normalized by default, i.e. they include the
//! `-(N/2)·ln 2π` constant. The `normalized = false` paths drop it and return
//! the proportional form used in the derivations.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MdnError, Result};
use crate::linalg::{
    clamp_diag, exp_diag, log_det_half_precision, solve_upper, tri_matvec, CholeskyFactor,
    UpperTriangularRaw,
};
use crate::scalar::Real;

/// Tolerance on `|Σω − 1|` below which weights are renormalized instead of rejected.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

fn validate_weights<T: Real>(mut weights: Vec<T>) -> Result<Vec<T>> {
    if weights.is_empty() {
        return Err(MdnError::InvalidParams("mixture needs at least one component".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
        return Err(MdnError::InvalidParams("weights must be finite and non-negative".into()));
    }
    let total = weights.iter().fold(T::zero(), |a, &w| a + w);
    if total == T::zero() {
        return Err(MdnError::InvalidParams("all mixture weights are zero".into()));
    }
    if (total - T::one()).abs() > T::lit(SIMPLEX_TOLERANCE) {
        return Err(MdnError::InvalidParams(format!(
            "weights sum to {total}, not 1"
        )));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(weights)
}

fn check_finite<T: Real>(values: &[T], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MdnError::InvalidParams(format!("non-finite entry in {what}")))
    }
}

/// Mixture with full covariance, each component given by its mean and raw precision triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams<T> {
    dim: usize,
    weights: Vec<T>,
    means: Vec<T>,
    factors_raw: Vec<UpperTriangularRaw<T>>,
}

impl<T: Real> MixtureParams<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, factors_raw: Vec<UpperTriangularRaw<T>>) -> Result<Self> {
        let weights = validate_weights(weights)?;
        let k = weights.len();
        if means.len() != k {
            return Err(MdnError::shape("mixture means", k, means.len()));
        }
        if factors_raw.len() != k {
            return Err(MdnError::shape("mixture factors", k, factors_raw.len()));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(MdnError::InvalidParams("data dimension must be positive".into()));
        }
        for (m, u) in means.iter().zip(&factors_raw) {
            if m.len() != dim {
                return Err(MdnError::shape("component mean", dim, m.len()));
            }
            if u.dim() != dim {
                return Err(MdnError::shape("component factor dimension", dim, u.dim()));
            }
            check_finite(m, "means")?;
        }
        Ok(Self {
            dim,
            weights,
            means: means.concat(),
            factors_raw,
        })
    }

    pub fn mean(&self, i: usize) -> &[T] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn factor_raw(&self, i: usize) -> &UpperTriangularRaw<T> {
        &self.factors_raw[i]
    }

    pub fn factor(&self, i: usize) -> CholeskyFactor<T> {
        exp_diag(&self.factors_raw[i])
    }
}

/// Mixture with diagonal covariance; `log_inv_scales` holds `σ` with `σ̄ = exp(σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagParams<T> {
    dim: usize,
    weights: Vec<T>,
    means: Vec<T>,
    log_inv_scales: Vec<T>,
}

impl<T: Real> DiagParams<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, log_inv_scales: Vec<Vec<T>>) -> Result<Self> {
        let weights = validate_weights(weights)?;
        let k = weights.len();
        if means.len() != k {
            return Err(MdnError::shape("mixture means", k, means.len()));
        }
        if log_inv_scales.len() != k {
            return Err(MdnError::shape("mixture scales", k, log_inv_scales.len()));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(MdnError::InvalidParams("data dimension must be positive".into()));
        }
        for (m, s) in means.iter().zip(&log_inv_scales) {
            if m.len() != dim {
                return Err(MdnError::shape("component mean", dim, m.len()));
            }
            if s.len() != dim {
                return Err(MdnError::shape("component scales", dim, s.len()));
            }
            check_finite(m, "means")?;
            check_finite(s, "log inverse scales")?;
        }
        Ok(Self {
            dim,
            weights,
            means: means.concat(),
            log_inv_scales: log_inv_scales.concat(),
        })
    }

    pub fn mean(&self, i: usize) -> &[T] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn log_inv_scales(&self, i: usize) -> &[T] {
        &self.log_inv_scales[i * self.dim..(i + 1) * self.dim]
    }

    /// The same mixture expressed with full triangles (zero off-diagonals).
    pub fn embed_full(&self) -> MixtureParams<T> {
        let factors = (0..self.weights.len())
            .map(|i| UpperTriangularRaw::from_diag(self.log_inv_scales(i)).expect("validated scales"))
            .collect();
        MixtureParams {
            dim: self.dim,
            weights: self.weights.clone(),
            means: self.means.clone(),
            factors_raw: factors,
        }
    }
}

/// Latent code `η` of a data point under one component.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector<T>(Vec<T>);

impl<T: Real> LatentVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MdnError::InvalidInput("non-finite latent entry".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

/// A single draw together with the component it came from and its latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw<T> {
    pub x: Vec<T>,
    pub component: usize,
    pub eta: LatentVector<T>,
}

/// Common interface of the diagonal and full parameterizations.
pub trait GaussianMixture<T: Real> {
    /// Data dimension `N`.
    fn dim(&self) -> usize;

    fn weights(&self) -> &[T];

    fn component_log_density(&self, i: usize, x: &[T], normalized: bool) -> Result<T>;

    /// `η` such that `x = latent_to_x(η)` under component `i`.
    fn x_to_latent(&self, x: &[T], i: usize) -> Result<LatentVector<T>>;

    fn latent_to_x(&self, eta: &LatentVector<T>, i: usize) -> Result<Vec<T>>;

    /// Component count `K`.
    fn len(&self) -> usize {
        self.weights().len()
    }

    fn is_empty(&self) -> bool {
        self.weights().is_empty()
    }
}

fn check_index(i: usize, k: usize) -> Result<()> {
    if i < k {
        Ok(())
    } else {
        Err(MdnError::InvalidInput(format!("component index {i} out of range for K={k}")))
    }
}

impl<T: Real> GaussianMixture<T> for MixtureParams<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn weights(&self) -> &[T] {
        &self.weights
    }

    fn component_log_density(&self, i: usize, x: &[T], normalized: bool) -> Result<T> {
        check_index(i, self.len())?;
        component_log_density_full(x, self.mean(i), &self.factors_raw[i], normalized)
    }

    fn x_to_latent(&self, x: &[T], i: usize) -> Result<LatentVector<T>> {
        check_index(i, self.len())?;
        if x.len() != self.dim {
            return Err(MdnError::shape("x_to_latent point", self.dim, x.len()));
        }
        let d: Vec<T> = x.iter().zip(self.mean(i)).map(|(&a, &m)| a - m).collect();
        Ok(LatentVector(tri_matvec(&self.factor(i), &d)?))
    }

    fn latent_to_x(&self, eta: &LatentVector<T>, i: usize) -> Result<Vec<T>> {
        check_index(i, self.len())?;
        if eta.0.len() != self.dim {
            return Err(MdnError::shape("latent_to_x latent", self.dim, eta.0.len()));
        }
        let offset = solve_upper(&self.factor(i), &eta.0)?;
        Ok(self.mean(i).iter().zip(offset).map(|(&m, o)| m + o).collect())
    }
}

impl<T: Real> GaussianMixture<T> for DiagParams<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn weights(&self) -> &[T] {
        &self.weights
    }

    fn component_log_density(&self, i: usize, x: &[T], normalized: bool) -> Result<T> {
        check_index(i, self.len())?;
        component_log_density_diag(x, self.mean(i), self.log_inv_scales(i), normalized)
    }

    fn x_to_latent(&self, x: &[T], i: usize) -> Result<LatentVector<T>> {
        check_index(i, self.len())?;
        if x.len() != self.dim {
            return Err(MdnError::shape("x_to_latent point", self.dim, x.len()));
        }
        Ok(LatentVector(
            x.iter()
                .zip(self.mean(i))
                .zip(self.log_inv_scales(i))
                .map(|((&a, &m), &s)| (a - m) * clamp_diag(s).exp())
                .collect(),
        ))
    }

    fn latent_to_x(&self, eta: &LatentVector<T>, i: usize) -> Result<Vec<T>> {
        check_index(i, self.len())?;
        if eta.0.len() != self.dim {
            return Err(MdnError::shape("latent_to_x latent", self.dim, eta.0.len()));
        }
        Ok(self
            .mean(i)
            .iter()
            .zip(self.log_inv_scales(i))
            .zip(&eta.0)
            .map(|((&m, &s), &e)| m + e / clamp_diag(s).exp())
            .collect())
    }
}

/// Either parameterization, as produced by the network head.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixture<T> {
    Full(MixtureParams<T>),
    Diag(DiagParams<T>),
}

impl<T: Real> GaussianMixture<T> for Mixture<T> {
    fn dim(&self) -> usize {
        match self {
            Mixture::Full(p) => p.dim(),
            Mixture::Diag(p) => p.dim(),
        }
    }

    fn weights(&self) -> &[T] {
        match self {
            Mixture::Full(p) => p.weights(),
            Mixture::Diag(p) => p.weights(),
        }
    }

    fn component_log_density(&self, i: usize, x: &[T], normalized: bool) -> Result<T> {
        match self {
            Mixture::Full(p) => p.component_log_density(i, x, normalized),
            Mixture::Diag(p) => p.component_log_density(i, x, normalized),
        }
    }

    fn x_to_latent(&self, x: &[T], i: usize) -> Result<LatentVector<T>> {
        match self {
            Mixture::Full(p) => p.x_to_latent(x, i),
            Mixture::Diag(p) => p.x_to_latent(x, i),
        }
    }

    fn latent_to_x(&self, eta: &LatentVector<T>, i: usize) -> Result<Vec<T>> {
        match self {
            Mixture::Full(p) => p.latent_to_x(eta, i),
            Mixture::Diag(p) => p.latent_to_x(eta, i),
        }
    }
}

fn half_log_two_pi_times<T: Real>(n: usize) -> T {
    T::lit(0.5) * T::lit(n as f64) * T::ln_two_pi()
}

/// `-½‖Ū(x−μ)‖² + Σ_j diag(U)_j`, minus `(N/2)·ln 2π` when `normalized`.
pub fn component_log_density_full<T: Real>(
    x: &[T],
    mean: &[T],
    u: &UpperTriangularRaw<T>,
    normalized: bool,
) -> Result<T> {
    let n = u.dim();
    if x.len() != n {
        return Err(MdnError::shape("density point", n, x.len()));
    }
    if mean.len() != n {
        return Err(MdnError::shape("density mean", n, mean.len()));
    }
    let d: Vec<T> = x.iter().zip(mean).map(|(&a, &m)| a - m).collect();
    let z = tri_matvec(&exp_diag(u), &d)?;
    let sq = z.iter().fold(T::zero(), |acc, &v| acc + v * v);
    let mut ld = log_det_half_precision(u) - T::lit(0.5) * sq;
    if normalized {
        ld -= half_log_two_pi_times(n);
    }
    Ok(ld)
}

/// `-½‖(x−μ)⊙σ̄‖² + Σ_j σ_j`, minus `(N/2)·ln 2π` when `normalized`.
pub fn component_log_density_diag<T: Real>(
    x: &[T],
    mean: &[T],
    log_inv_scales: &[T],
    normalized: bool,
) -> Result<T> {
    let n = log_inv_scales.len();
    if x.len() != n {
        return Err(MdnError::shape("density point", n, x.len()));
    }
    if mean.len() != n {
        return Err(MdnError::shape("density mean", n, mean.len()));
    }
    let mut sq = T::zero();
    let mut log_det = T::zero();
    for ((&a, &m), &s) in x.iter().zip(mean).zip(log_inv_scales) {
        let s = clamp_diag(s);
        let z = (a - m) * s.exp();
        sq += z * z;
        log_det += s;
    }
    let mut ld = log_det - T::lit(0.5) * sq;
    if normalized {
        ld -= half_log_two_pi_times(n);
    }
    Ok(ld)
}

/// `ln Σ exp(v_i)` with the maximum factored out. Empty or all `-∞` input gives `-∞`.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s = values.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
    max + s.ln()
}

/// Per-component terms `ln ω_i + ln p_i(x)`.
pub fn component_terms<T: Real, P: GaussianMixture<T> + ?Sized>(x: &[T], p: &P, normalized: bool) -> Result<Vec<T>> {
    if x.len() != p.dim() {
        return Err(MdnError::shape("mixture point", p.dim(), x.len()));
    }
    (0..p.len())
        .map(|i| Ok(p.weights()[i].ln() + p.component_log_density(i, x, normalized)?))
        .collect()
}

/// Normalized mixture log-density `ln Σ_i ω_i p_i(x)`.
pub fn mixture_log_density<T: Real, P: GaussianMixture<T> + ?Sized>(x: &[T], p: &P) -> Result<T> {
    mixture_log_density_with(x, p, true)
}

pub fn mixture_log_density_with<T: Real, P: GaussianMixture<T> + ?Sized>(
    x: &[T],
    p: &P,
    normalized: bool,
) -> Result<T> {
    Ok(log_sum_exp(&component_terms(x, p, normalized)?))
}

/// Inverse-CDF component choice for a given uniform `u ∈ [0, 1)`.
///
/// Returns the lowest index `i` with `ω_i > 0` and `u ≤ Σ_{j≤i} ω_j`, so a draw
/// landing exactly on a cumulative boundary selects the lower component.
pub fn select_component<T: Real>(weights: &[T], u: T) -> usize {
    let mut cum = T::zero();
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= T::zero() {
            continue;
        }
        cum += w;
        last_positive = i;
        if !(cum < u) {
            return i;
        }
    }
    // cumulative sum fell short of u by rounding
    last_positive
}

/// Draws a component index with probability proportional to its weight, using one uniform.
pub fn sample_component_index<T: Real, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    select_component(weights, T::lit(u))
}

fn standard_normal<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Draws `x = μ_i + Ū_i⁻¹ η` (full) or `x = μ_i + η ⊘ σ̄_i` (diagonal).
///
/// The component uniform is consumed even when `forced_index` is given, so a
/// forced draw and a free draw from the same rng state share their `η`.
pub fn sample<T: Real, P: GaussianMixture<T> + ?Sized, R: Rng + ?Sized>(
    p: &P,
    rng: &mut R,
    forced_index: Option<usize>,
) -> Result<Draw<T>> {
    let drawn = sample_component_index(p.weights(), rng);
    let component = match forced_index {
        Some(i) => {
            check_index(i, p.len())?;
            i
        }
        None => drawn,
    };
    let eta = LatentVector(standard_normal(p.dim(), rng));
    let x = p.latent_to_x(&eta, component)?;
    Ok(Draw { x, component, eta })
}

/// Log-densities on a regular 2-D node grid plus the Riemann estimate of total mass.
#[derive(Debug, Clone)]
pub struct DensityGrid<T> {
    /// `(x1, x2, log_density)` in row-major order over `x1`, then `x2`.
    pub points: Vec<(T, T, T)>,
    pub mass: T,
}

/// Evaluates the mixture on nodes `lo + i·step` for `i = 0..=round((hi−lo)/step)` along both axes.
pub fn density_grid<T: Real, P: GaussianMixture<T> + ?Sized>(p: &P, lo: T, hi: T, step: T) -> Result<DensityGrid<T>> {
    if p.dim() != 2 {
        return Err(MdnError::InvalidInput(format!(
            "density grid export needs N=2, model has N={}",
            p.dim()
        )));
    }
    if !(step > T::zero()) || !(hi > lo) {
        return Err(MdnError::InvalidInput("grid needs hi > lo and step > 0".into()));
    }
    let steps = ((hi - lo) / step).round().to_usize().unwrap_or(0);
    let axis: Vec<T> = (0..=steps).map(|i| lo + T::lit(i as f64) * step).collect();
    let mut points = Vec::with_capacity(axis.len() * axis.len());
    let mut mass = T::zero();
    for &a in &axis {
        for &b in &axis {
            let ld = mixture_log_density(&[a, b], p)?;
            mass += ld.exp();
            points.push((a, b, ld));
        }
    }
    Ok(DensityGrid {
        points,
        mass: mass * step * step,
    })
}
