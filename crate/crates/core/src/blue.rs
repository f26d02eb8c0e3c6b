//! Normal equations of the multilevel best linear unbiased estimator.
//!
//! For sample counts `m` over a group system, the information operator is
//!
//! ```text
//! Ψ(m) = Σ_k m_k P^k (C^k)⁻¹ R^k,
//! ```
//!
//! the estimator of `αᵀμ` solves `Ψ(m) μ̂ = y(m)` and has variance
//! `αᵀ Ψ(m)⁻¹ α`. Per-group coefficient vectors of the equivalent linear
//! combination are `β^k = m_k P^k (C^k)⁻¹ R^k Ψ(m)⁻¹ α`, and any fixed
//! coefficient scheme has variance `Σ_k (β^k)ᵀ C β^k / m_k`. The two
//! variance routes are kept separate on purpose; their agreement is a
//! consistency check, not a redundancy.

use crate::error::{Error, Result};
use crate::groups::{principal_submatrix, restrict, GroupSystem};
use crate::linalg::{solve_spd_checked, Cholesky, Matrix};
use crate::num::Real;

/// Relative residual allowed on normal-equation solves.
pub const SOLVE_RTOL: f64 = 1e-10;

/// Condition-estimate threshold above which a group covariance is flagged.
pub const CONDITION_WARN: f64 = 1e12;

/// Per-group sample counts plus the work they consume.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub m: Vec<f64>,
    pub cost: f64,
}

impl Allocation {
    pub fn new(m: Vec<f64>, system: &GroupSystem) -> Result<Self> {
        if m.len() != system.len() {
            return Err(Error::invalid(format!(
                "allocation has {} entries for {} groups",
                m.len(),
                system.len()
            )));
        }
        if m.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("allocation: counts must be finite and >= 0"));
        }
        let cost = m
            .iter()
            .zip(system.costs())
            .map(|(mk, wk)| mk * wk)
            .sum();
        Ok(Allocation { m, cost })
    }

    /// True when every count is a whole number (within fp slack).
    pub fn is_integral(&self) -> bool {
        self.m.iter().all(|&x| (x - x.round()).abs() < 1e-9)
    }
}

/// A concrete linear unbiased estimator: groups, coefficients, counts, bias
/// vector. Invariants are enforced at construction and re-checkable through
/// [`check_unbiased`].
#[derive(Clone, Debug)]
pub struct EstimatorScheme<T> {
    pub system: GroupSystem,
    /// One vector in `R^L` per group, supported on that group's levels.
    pub betas: Vec<Vec<T>>,
    pub m: Vec<f64>,
    pub alpha: Vec<T>,
}

impl<T: Real> EstimatorScheme<T> {
    pub fn new(
        system: GroupSystem,
        betas: Vec<Vec<T>>,
        m: Vec<f64>,
        alpha: Vec<T>,
    ) -> Result<Self> {
        if betas.len() != system.len() || m.len() != system.len() {
            return Err(Error::invalid(
                "scheme: betas and counts must have one entry per group",
            ));
        }
        if alpha.len() != system.n_levels() {
            return Err(Error::invalid("scheme: bias vector has wrong length"));
        }
        for (k, beta) in betas.iter().enumerate() {
            if beta.len() != system.n_levels() {
                return Err(Error::invalid(format!(
                    "scheme: beta vector {k} has wrong length"
                )));
            }
        }
        let scheme = EstimatorScheme {
            system,
            betas,
            m,
            alpha,
        };
        let report = check_unbiased(&scheme, 1e-10);
        if !report.pass() {
            return Err(Error::invalid(format!("scheme: {report}")));
        }
        Ok(scheme)
    }

    /// Equal-budget rescaling of every group count.
    pub fn scale_counts(&mut self, factor: f64) {
        for mk in &mut self.m {
            *mk *= factor;
        }
    }

    pub fn allocation(&self) -> Result<Allocation> {
        Allocation::new(self.m.clone(), &self.system)
    }

    pub fn map_to_f64(&self) -> EstimatorScheme<f64> {
        EstimatorScheme {
            system: self.system.clone(),
            betas: self
                .betas
                .iter()
                .map(|b| b.iter().map(|x| x.to_f64()).collect())
                .collect(),
            m: self.m.clone(),
            alpha: self.alpha.iter().map(|x| x.to_f64()).collect(),
        }
    }
}

/// Structured outcome of the unbiasedness check.
#[derive(Clone, Debug, Default)]
pub struct UnbiasednessReport {
    /// `max_ℓ |Σ_k β^k_ℓ − α_ℓ|`.
    pub sum_residual: f64,
    /// Groups with a coefficient outside their support.
    pub support_violations: Vec<(usize, usize)>,
    /// Groups with β ≠ 0 but m = 0.
    pub zero_count_violations: Vec<usize>,
    pub tolerance: f64,
}

impl UnbiasednessReport {
    pub fn pass(&self) -> bool {
        self.sum_residual <= self.tolerance
            && self.support_violations.is_empty()
            && self.zero_count_violations.is_empty()
    }
}

impl std::fmt::Display for UnbiasednessReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "unbiasedness: sum residual {:.3e} (tol {:.1e}), {} support violations, {} zero-count violations",
            self.sum_residual,
            self.tolerance,
            self.support_violations.len(),
            self.zero_count_violations.len()
        )
    }
}

/// Verify `Σ_k β^k = α`, the support condition, and `m_k = 0 ⇒ β^k = 0`.
pub fn check_unbiased<T: Real>(scheme: &EstimatorScheme<T>, tol: f64) -> UnbiasednessReport {
    let n = scheme.system.n_levels();
    let mut report = UnbiasednessReport {
        tolerance: tol,
        ..Default::default()
    };
    let mut sums = vec![T::zero(); n];
    for (k, beta) in scheme.betas.iter().enumerate() {
        let group = scheme.system.group(k);
        let mut nonzero = false;
        for (idx, &b) in beta.iter().enumerate() {
            if b != T::zero() {
                nonzero = true;
                if !group.contains(idx + 1) {
                    report.support_violations.push((k, idx + 1));
                }
            }
            sums[idx] += b;
        }
        if nonzero && scheme.m[k] == 0.0 {
            report.zero_count_violations.push(k);
        }
    }
    for i in 0..n {
        report.sum_residual = report
            .sum_residual
            .max((sums[i] - scheme.alpha[i]).abs().to_f64());
    }
    report
}

/// Cost `Σ_k m_k W_k` of running the scheme once.
pub fn scheme_cost<T: Real>(scheme: &EstimatorScheme<T>) -> f64 {
    scheme
        .m
        .iter()
        .zip(scheme.system.costs())
        .map(|(mk, wk)| mk * wk)
        .sum()
}

/// Cached per-group solve data for Ψ assembly.
pub(crate) struct GroupKernels<T> {
    /// `(C^k)⁻¹` for each group, in group-local coordinates.
    pub info: Vec<Matrix<T>>,
    /// Cholesky factors of each `C^k`.
    pub chol: Vec<Cholesky<T>>,
    /// Groups whose condition estimate exceeds [`CONDITION_WARN`].
    pub flagged: Vec<usize>,
}

impl<T: Real> GroupKernels<T> {
    pub fn new(system: &GroupSystem, cov: &Matrix<T>) -> Result<Self> {
        let mut info = Vec::with_capacity(system.len());
        let mut chol = Vec::with_capacity(system.len());
        let mut flagged = Vec::new();
        for (k, group) in system.groups().iter().enumerate() {
            let sub = principal_submatrix(cov, group);
            let fac = Cholesky::with_context(&sub, &format!("group {group} covariance"))?;
            if fac.condition_hint() > CONDITION_WARN {
                flagged.push(k);
            }
            info.push(fac.inverse());
            chol.push(fac);
        }
        Ok(GroupKernels {
            info,
            chol,
            flagged,
        })
    }

    /// Ψ(m) for the given counts; groups with `m_k = 0` are skipped.
    pub fn assemble_psi(&self, system: &GroupSystem, m: &[f64]) -> Matrix<T> {
        let n = system.n_levels();
        let mut psi = Matrix::<T>::zeros(n, n);
        for (k, group) in system.groups().iter().enumerate() {
            if m[k] == 0.0 {
                continue;
            }
            let mk = T::from_f64(m[k]);
            let block = &self.info[k];
            for (a, &i) in group.levels().iter().enumerate() {
                for (b, &j) in group.levels().iter().enumerate() {
                    psi[(i - 1, j - 1)] += mk * block[(a, b)];
                }
            }
        }
        psi
    }

    /// `g_k = (R^k u)ᵀ (C^k)⁻¹ (R^k u)`, evaluated through the factor.
    pub fn group_energy(&self, system: &GroupSystem, k: usize, u: &[T]) -> T {
        let r = restrict(u, system.group(k));
        self.chol[k].quad_form_inv(&r)
    }
}

/// Assemble `Ψ(m) = Σ_k m_k P^k (C^k)⁻¹ R^k`.
///
/// Fails with the offending group's label if some `C^k` with `m_k > 0` is
/// not positive definite.
pub fn assemble_psi<T: Real>(
    system: &GroupSystem,
    cov: &Matrix<T>,
    alloc: &Allocation,
) -> Result<Matrix<T>> {
    if alloc.m.len() != system.len() {
        return Err(Error::invalid("assemble_psi: allocation/group mismatch"));
    }
    let n = system.n_levels();
    let mut psi = Matrix::<T>::zeros(n, n);
    for (k, group) in system.groups().iter().enumerate() {
        if alloc.m[k] == 0.0 {
            continue;
        }
        let sub = principal_submatrix(cov, group);
        let fac = Cholesky::with_context(&sub, &format!("group {group} covariance"))?;
        let inv = fac.inverse();
        let mk = T::from_f64(alloc.m[k]);
        for (a, &i) in group.levels().iter().enumerate() {
            for (b, &j) in group.levels().iter().enumerate() {
                psi[(i - 1, j - 1)] += mk * inv[(a, b)];
            }
        }
    }
    Ok(psi)
}

/// Estimator variance `αᵀ Ψ⁻¹ α` through a factorized, residual-checked solve.
pub fn blue_variance<T: Real>(psi: &Matrix<T>, alpha: &[T]) -> Result<T> {
    let u = solve_spd_checked(psi, alpha, SOLVE_RTOL, "information operator")?;
    let mut acc = T::zero();
    for i in 0..alpha.len() {
        acc += alpha[i] * u[i];
    }
    Ok(acc)
}

/// `β^k = m_k P^k (C^k)⁻¹ R^k Ψ(m)⁻¹ α` for every group.
pub fn extract_beta<T: Real>(
    system: &GroupSystem,
    cov: &Matrix<T>,
    alloc: &Allocation,
    alpha: &[T],
) -> Result<Vec<Vec<T>>> {
    let kernels = GroupKernels::new(system, cov)?;
    let psi = kernels.assemble_psi(system, &alloc.m);
    let u = solve_spd_checked(&psi, alpha, SOLVE_RTOL, "information operator")?;
    Ok(betas_from_solution(system, &kernels, &alloc.m, &u))
}

pub(crate) fn betas_from_solution<T: Real>(
    system: &GroupSystem,
    kernels: &GroupKernels<T>,
    m: &[f64],
    u: &[T],
) -> Vec<Vec<T>> {
    let n = system.n_levels();
    let mut betas = Vec::with_capacity(system.len());
    for (k, group) in system.groups().iter().enumerate() {
        let mut beta = vec![T::zero(); n];
        if m[k] > 0.0 {
            let ru = restrict(u, group);
            let local = kernels.info[k].matvec(&ru);
            let mk = T::from_f64(m[k]);
            for (a, &l) in group.levels().iter().enumerate() {
                beta[l - 1] = mk * local[a];
            }
        }
        betas.push(beta);
    }
    betas
}

/// Fixed-coefficient estimator variance `Σ_k (β^k)ᵀ C β^k / m_k`.
pub fn scheme_variance<T: Real>(scheme: &EstimatorScheme<T>, cov: &Matrix<T>) -> Result<T> {
    let mut total = T::zero();
    for (k, beta) in scheme.betas.iter().enumerate() {
        let nonzero = beta.iter().any(|&b| b != T::zero());
        if !nonzero {
            continue;
        }
        if scheme.m[k] <= 0.0 {
            return Err(Error::invalid(format!(
                "scheme variance: group {} has coefficients but no samples",
                scheme.system.group(k)
            )));
        }
        total += cov.quad_form(beta, beta) / T::from_f64(scheme.m[k]);
    }
    Ok(total)
}

/// Point estimate `αᵀ μ̂` from per-group model evaluations.
///
/// `samples[k][i]` holds the i-th evaluation of group k, ordered as the
/// group's levels. Sample counts define `m`; Ψ must be regular.
pub fn blue_point_estimate(
    system: &GroupSystem,
    cov: &Matrix<f64>,
    samples: &[Vec<Vec<f64>>],
    alpha: &[f64],
) -> Result<f64> {
    if samples.len() != system.len() {
        return Err(Error::invalid(
            "point estimate: one sample list per group required",
        ));
    }
    let n = system.n_levels();
    if alpha.len() != n {
        return Err(Error::invalid("point estimate: bias vector length mismatch"));
    }
    let mut m = vec![0.0f64; system.len()];
    let mut y = vec![0.0f64; n];
    for (k, group) in system.groups().iter().enumerate() {
        m[k] = samples[k].len() as f64;
        if samples[k].is_empty() {
            continue;
        }
        let sub = principal_submatrix(cov, group);
        let fac = Cholesky::with_context(&sub, &format!("group {group} covariance"))?;
        let mut acc = vec![0.0f64; group.size()];
        for event in &samples[k] {
            if event.len() != group.size() {
                return Err(Error::invalid(format!(
                    "point estimate: group {group} event has {} values, expected {}",
                    event.len(),
                    group.size()
                )));
            }
            for (a, &z) in event.iter().enumerate() {
                acc[a] += z;
            }
        }
        let solved = fac.solve(&acc);
        for (a, &l) in group.levels().iter().enumerate() {
            y[l - 1] += solved[a];
        }
    }
    let alloc = Allocation::new(m, system)?;
    let psi = assemble_psi(system, cov, &alloc)?;
    let mu_hat = solve_spd_checked(&psi, &y, SOLVE_RTOL, "information operator")?;
    Ok(alpha.iter().zip(&mu_hat).map(|(a, m)| a * m).sum())
}
