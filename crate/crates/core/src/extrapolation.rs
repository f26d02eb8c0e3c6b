//! Extrapolation coefficient vectors and the estimator schemes built from
//! them: plain MC, the telescoping MLMC scheme, extrapolated telescopes of a
//! given order, and their weighted generalization with independently chosen
//! bias and variance orders.
//!
//! The coefficient vectors `v^{k,q} ∈ R^L` follow the recursion
//!
//! ```text
//! v^{0,q} = 0,  v^{1,q} = e₁,
//! v^{k,q} = (2^{γ^k} D v^{k-1,q} − v^{k-1,q}) / (2^{γ^k} − 1)   for 1 < k < q,
//! v^{k,q} = D v^{k-1,q}                                          for k ≥ q,
//! ```
//!
//! with `D` the down-shift matrix. Each combination step cancels one more
//! term of the pathwise expansion; from `k = q` on the stencil just slides
//! to finer levels. For `q = 2` no combination happens and `v^{k,2} = e_k`,
//! which reproduces the MLMC telescope exactly.

use crate::blue::EstimatorScheme;
use crate::error::{Error, Result};
use crate::family::{CostModel, MomentData, RateVector};
use crate::groups::{GroupSystem, ModelGroup};
use crate::num::Real;

/// Extrapolation vectors `v^{k,q}` for `k = 0..=L`.
#[derive(Clone, Debug)]
pub struct ReCoefficients<T> {
    n_levels: usize,
    order: usize,
    vectors: Vec<Vec<T>>,
}

impl<T: Real> ReCoefficients<T> {
    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `v^{k,q}`; `k` may be 0 (zero vector) up to `L`.
    pub fn vector(&self, k: usize) -> &[T] {
        &self.vectors[k]
    }

    /// `v^{k,q} − v^{k-1,q}` for `k = 1..=L`.
    pub fn difference(&self, k: usize) -> Vec<T> {
        let cur = &self.vectors[k];
        let prev = &self.vectors[k - 1];
        cur.iter().zip(prev).map(|(&a, &b)| a - b).collect()
    }
}

/// Build the coefficient vectors for `L` levels at the given order.
pub fn re_vectors<T: Real>(
    n_levels: usize,
    rates: &RateVector,
    order: usize,
) -> Result<ReCoefficients<T>> {
    if n_levels == 0 {
        return Err(Error::invalid("re_vectors: need at least one level"));
    }
    if order < 2 {
        return Err(Error::invalid("re_vectors: order must be at least 2"));
    }
    if order > rates.order() {
        return Err(Error::invalid(format!(
            "re_vectors: order {order} exceeds the {} available rates",
            rates.order()
        )));
    }
    let mut vectors = Vec::with_capacity(n_levels + 1);
    vectors.push(vec![T::zero(); n_levels]);
    let mut e1 = vec![T::zero(); n_levels];
    e1[0] = T::one();
    vectors.push(e1);
    for k in 2..=n_levels {
        let prev = vectors.last().expect("nonempty");
        let shifted = shift_down(prev);
        let next = if k < order {
            let f = T::pow2(rates.gamma(k));
            let denom = f - T::one();
            shifted
                .iter()
                .zip(prev)
                .map(|(&s, &p)| (f * s - p) / denom)
                .collect()
        } else {
            shifted
        };
        vectors.push(next);
    }
    Ok(ReCoefficients {
        n_levels,
        order,
        vectors,
    })
}

fn shift_down<T: Real>(v: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    out[1..].copy_from_slice(&v[..v.len() - 1]);
    out
}

/// Group `{max(k−q+1, 1), ..., k}` of the order-`q` telescope.
fn chain_group(k: usize, order: usize) -> ModelGroup {
    let lo = k.saturating_sub(order - 1).max(1);
    ModelGroup::range(lo, k).expect("valid chain")
}

fn chain_system(n_levels: usize, order: usize, cost: &CostModel) -> Result<GroupSystem> {
    let groups = (1..=n_levels).map(|k| chain_group(k, order)).collect();
    GroupSystem::from_groups(groups, cost, n_levels)
}

fn check_counts(n_levels: usize, m: &[f64]) -> Result<()> {
    if m.len() != n_levels {
        return Err(Error::invalid(format!(
            "expected one sample count per level ({n_levels}), got {}",
            m.len()
        )));
    }
    Ok(())
}

/// Extrapolated telescope targeting its natural bias vector `α = v^{L,q}`.
pub fn re_scheme<T: Real>(
    n_levels: usize,
    rates: &RateVector,
    order: usize,
    cost: &CostModel,
    m: &[f64],
) -> Result<EstimatorScheme<T>> {
    check_counts(n_levels, m)?;
    let coeffs = re_vectors::<T>(n_levels, rates, order)?;
    let system = chain_system(n_levels, order, cost)?;
    let betas: Vec<Vec<T>> = (1..=n_levels).map(|k| coeffs.difference(k)).collect();
    let alpha = coeffs.vector(n_levels).to_vec();
    EstimatorScheme::new(system, betas, m.to_vec(), alpha)
}

/// Extrapolated telescope retargeted at the unit bias vector `α = e_L`:
/// the weighted scheme with variance order `q` and bias order 2, since
/// `v^{L,2} = e_L`. Every difference is rescaled by its weight so the
/// whole telescope sums to `e_L`; for `q = 2` the weights are all one and
/// this is exactly the MLMC scheme.
pub fn re_scheme_unit_bias<T: Real>(
    n_levels: usize,
    rates: &RateVector,
    order: usize,
    cost: &CostModel,
    m: &[f64],
) -> Result<EstimatorScheme<T>> {
    weighted_re_scheme(n_levels, rates, order, 2, cost, m)
}

/// Plain MC on the finest level: one group `{L}`, `β = α = e_L`.
pub fn mc_scheme<T: Real>(
    n_levels: usize,
    cost: &CostModel,
    m: f64,
) -> Result<EstimatorScheme<T>> {
    let system = GroupSystem::from_groups(
        vec![ModelGroup::new(vec![n_levels])?],
        cost,
        n_levels,
    )?;
    let mut beta = vec![T::zero(); n_levels];
    beta[n_levels - 1] = T::one();
    EstimatorScheme::new(system, vec![beta.clone()], vec![m], beta)
}

/// The MLMC telescope: groups `{1}, {1,2}, ..., {L−1,L}` with difference
/// coefficients and `α = e_L`.
pub fn mlmc_scheme<T: Real>(
    n_levels: usize,
    cost: &CostModel,
    m: &[f64],
) -> Result<EstimatorScheme<T>> {
    check_counts(n_levels, m)?;
    let system = chain_system(n_levels, 2, cost)?;
    let mut betas = Vec::with_capacity(n_levels);
    for k in 1..=n_levels {
        let mut beta = vec![T::zero(); n_levels];
        beta[k - 1] = T::one();
        if k > 1 {
            beta[k - 2] = -T::one();
        }
        betas.push(beta);
    }
    let mut alpha = vec![T::zero(); n_levels];
    alpha[n_levels - 1] = T::one();
    EstimatorScheme::new(system, betas, m.to_vec(), alpha)
}

/// Weights expanding a bias-order-`t` target over variance-order-`s`
/// telescope differences.
#[derive(Clone, Debug)]
pub struct WeightedReWeights<T> {
    pub weights: Vec<T>,
    pub variance_order: usize,
    pub bias_order: usize,
    /// Max-norm residual of the reconstruction, as a plain float.
    pub residual: f64,
    /// Set when `s > t`: boundedness of the weights is observed in practice
    /// but not proved, so downstream reporting marks it as conjectural.
    pub conjectural: bool,
}

impl<T: Real> WeightedReWeights<T> {
    pub fn max_abs_weight(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.abs().to_f64())
            .fold(0.0, f64::max)
    }
}

/// Solve `v^{L,t} = Σ_k a_k (v^{k,s} − v^{k-1,s})` by back substitution;
/// the difference vectors form a triangular basis with nonzero leading
/// entries, so the system is always solvable for valid rates.
pub fn weighted_re_weights<T: Real>(
    n_levels: usize,
    rates: &RateVector,
    variance_order: usize,
    bias_order: usize,
) -> Result<WeightedReWeights<T>> {
    let vs = re_vectors::<T>(n_levels, rates, variance_order)?;
    let vt = re_vectors::<T>(n_levels, rates, bias_order)?;
    let diffs: Vec<Vec<T>> = (1..=n_levels).map(|k| vs.difference(k)).collect();
    let target = vt.vector(n_levels);
    let mut weights = vec![T::zero(); n_levels];
    for level in (1..=n_levels).rev() {
        let mut acc = target[level - 1];
        for k in (level + 1)..=n_levels {
            acc -= weights[k - 1] * diffs[k - 1][level - 1];
        }
        let lead = diffs[level - 1][level - 1];
        if lead == T::zero() {
            return Err(Error::numerical(format!(
                "weighted extrapolation basis degenerate at level {level}"
            )));
        }
        weights[level - 1] = acc / lead;
    }
    // Reconstruction residual; anything above the solver tolerance means the
    // triangular structure assumption was violated.
    let mut residual = 0.0f64;
    for i in 0..n_levels {
        let mut acc = T::zero();
        for k in 0..n_levels {
            acc += weights[k] * diffs[k][i];
        }
        residual = residual.max((acc - target[i]).abs().to_f64());
    }
    if residual > 1e-10 {
        return Err(Error::numerical(format!(
            "weighted extrapolation reconstruction residual {residual:e}"
        )));
    }
    Ok(WeightedReWeights {
        weights,
        variance_order,
        bias_order,
        residual,
        conjectural: variance_order > bias_order,
    })
}

/// Weighted telescope: `β^k = a_k (v^{k,s} − v^{k-1,s})`, `α = v^{L,t}`.
pub fn weighted_re_scheme<T: Real>(
    n_levels: usize,
    rates: &RateVector,
    variance_order: usize,
    bias_order: usize,
    cost: &CostModel,
    m: &[f64],
) -> Result<EstimatorScheme<T>> {
    check_counts(n_levels, m)?;
    let w = weighted_re_weights::<T>(n_levels, rates, variance_order, bias_order)?;
    let vs = re_vectors::<T>(n_levels, rates, variance_order)?;
    let vt = re_vectors::<T>(n_levels, rates, bias_order)?;
    let system = chain_system(n_levels, variance_order, cost)?;
    let betas: Vec<Vec<T>> = (1..=n_levels)
        .map(|k| {
            vs.difference(k)
                .into_iter()
                .map(|d| w.weights[k - 1] * d)
                .collect()
        })
        .collect();
    EstimatorScheme::new(system, betas, m.to_vec(), vt.vector(n_levels).to_vec())
}

/// Absolute bias `|vᵀμ − E[Z]|` of a coefficient vector under the family
/// moments.
pub fn re_bias<T: Real>(v: &[T], moments: &MomentData<T>) -> T {
    assert_eq!(v.len(), moments.mu.len(), "re_bias: dimension mismatch");
    let mut acc = T::zero();
    for i in 0..v.len() {
        acc += v[i] * moments.mu[i];
    }
    (acc - moments.truth_mean).abs()
}
