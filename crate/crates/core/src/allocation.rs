//! Sample allocation: the closed-form optimum for fixed coefficients and
//! the budget-constrained variance minimization over group sample counts.
//!
//! For fixed coefficients with group variances `σ_k² = (β^k)ᵀ C β^k` the
//! minimizer of `Σ σ_k²/m_k` under `Σ m_k W_k = p` is
//!
//! ```text
//! m*_k = p (σ_k²/W_k)^{1/2} / Σ_j (σ_j² W_j)^{1/2},
//! J(m*) = (Σ_j (σ_j² W_j)^{1/2})² / p,
//! ```
//!
//! which is also the exact rebalancing step of the full solver: alternating
//! coefficient extraction with this reallocation descends monotonically,
//! because the best linear unbiased estimator at the new counts is at least
//! as good as the previous fixed-coefficient scheme. A projected-gradient
//! step with Armijo backtracking runs alongside it each iteration (gradient
//! `∂Var/∂m_k = −‖(C^k)^{-1/2} R^k Ψ⁻¹ α‖²`) and whichever candidate is
//! better is taken; the gradient step can re-activate groups the rebalance
//! keeps near the floor.

use crate::blue::{Allocation, GroupKernels};
use crate::error::{Error, Result};
use crate::groups::GroupSystem;
use crate::linalg::{solve_spd_checked, Cholesky, Matrix};
use crate::num::Real;

/// Iteration controls for [`saob_allocate`].
#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative objective improvement below which the solve is converged.
    pub rel_tol: f64,
    /// Groups with a final cost share below this are zeroed.
    pub activity_threshold: f64,
    /// Cost-share floor applied to every group while iterating, so the
    /// information operator stays positive definite and no group is locked
    /// out permanently.
    pub floor: f64,
    /// Additional starting allocations (one entry per group). The solver
    /// always starts from the telescoping initializer as well and returns
    /// the best run.
    pub warm_starts: Vec<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 10_000,
            rel_tol: 1e-12,
            activity_threshold: 1e-8,
            floor: 1e-12,
            warm_starts: Vec::new(),
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.rel_tol > 0.0) || !(self.activity_threshold > 0.0)
            || !(self.floor > 0.0)
        {
            return Err(Error::invalid("solver options must be positive"));
        }
        Ok(())
    }
}

/// Residuals of the Karush-Kuhn-Tucker system at the returned allocation.
///
/// With multiplier `λ = Var/p`, active groups satisfy `g_k = λ W_k` at the
/// optimum and inactive ones `g_k <= λ W_k`.
#[derive(Clone, Copy, Debug, Default)]
pub struct KktResiduals {
    /// `max_{active} |g_k/(λW_k) − 1|`.
    pub stationarity: f64,
    /// `max_{inactive} (g_k/(λW_k) − 1)₊`.
    pub dual_feasibility: f64,
    /// Largest cost share still carried by an inactive group.
    pub complementarity: f64,
}

/// Converged allocation with diagnostics.
#[derive(Clone, Debug)]
pub struct SaobSolution<T> {
    pub allocation: Allocation,
    pub variance: T,
    /// Coefficient vectors of the optimal estimator, one per group.
    pub betas: Vec<Vec<T>>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt: KktResiduals,
    /// Groups whose covariance condition estimate exceeded the warning
    /// threshold (usable, but reported).
    pub flagged_groups: Vec<usize>,
}

/// Rounding policy for turning continuous counts into sample numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoundingPolicy {
    /// Keep fractional counts.
    None,
    /// Ceil counts above the activity threshold, zero the rest.
    Ceil,
}

/// Closed-form optimal allocation for fixed group variances.
pub fn closed_form_allocation<T: Real>(
    group_variances: &[T],
    costs: &[f64],
    budget: f64,
) -> Result<(Allocation, T)> {
    if group_variances.len() != costs.len() {
        return Err(Error::invalid(
            "closed-form allocation: variance/cost length mismatch",
        ));
    }
    if !(budget > 0.0) {
        return Err(Error::invalid("closed-form allocation: budget must be positive"));
    }
    if costs.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::invalid("closed-form allocation: costs must be positive"));
    }
    if group_variances.iter().any(|v| *v < T::zero()) {
        return Err(Error::invalid(
            "closed-form allocation: group variances must be nonnegative",
        ));
    }
    let p = T::from_f64(budget);
    let mut denom = T::zero();
    let terms: Vec<T> = group_variances
        .iter()
        .zip(costs)
        .map(|(&v, &w)| (v * T::from_f64(w)).sqrt())
        .collect();
    for &t in &terms {
        denom += t;
    }
    if denom == T::zero() {
        return Err(Error::invalid(
            "closed-form allocation: all group variances vanish",
        ));
    }
    let mut m = Vec::with_capacity(costs.len());
    let mut cost_acc = 0.0f64;
    for (&v, &w) in group_variances.iter().zip(costs) {
        let mk = if v == T::zero() {
            0.0
        } else {
            (p * (v / T::from_f64(w)).sqrt() / denom).to_f64()
        };
        m.push(mk);
        cost_acc += mk * w;
    }
    let objective = denom * denom / p;
    Ok((
        Allocation {
            m,
            cost: cost_acc,
        },
        objective,
    ))
}

/// Apply a rounding policy and recompute the consumed cost.
pub fn round_allocation(
    alloc: &Allocation,
    system: &GroupSystem,
    policy: RoundingPolicy,
    activity_threshold: f64,
) -> Allocation {
    match policy {
        RoundingPolicy::None => alloc.clone(),
        RoundingPolicy::Ceil => {
            let budget = alloc.cost.max(f64::MIN_POSITIVE);
            let mut m = Vec::with_capacity(alloc.m.len());
            for (k, &mk) in alloc.m.iter().enumerate() {
                let floor_k = activity_threshold * budget / system.cost(k);
                m.push(if mk > floor_k { mk.ceil() } else { 0.0 });
            }
            let cost = m
                .iter()
                .zip(system.costs())
                .map(|(mk, wk)| mk * wk)
                .sum();
            Allocation { m, cost }
        }
    }
}

struct Evaluation<T> {
    shares: Vec<f64>,
    variance: T,
    /// `g_k = (R^k u)ᵀ (C^k)⁻¹ (R^k u)` at the current solution.
    energies: Vec<T>,
}

struct Workspace<'a, T> {
    system: &'a GroupSystem,
    kernels: GroupKernels<T>,
    alpha: &'a [T],
    budget: f64,
    floor: f64,
}

impl<'a, T: Real> Workspace<'a, T> {
    fn counts(&self, shares: &[f64]) -> Vec<f64> {
        shares
            .iter()
            .zip(self.system.costs())
            .map(|(x, w)| x * self.budget / w)
            .collect()
    }

    fn clamp(&self, shares: &mut Vec<f64>) {
        let mut total = 0.0;
        for x in shares.iter_mut() {
            if !x.is_finite() || *x < self.floor {
                *x = self.floor;
            }
            total += *x;
        }
        for x in shares.iter_mut() {
            *x /= total;
        }
    }

    fn evaluate(&self, shares: Vec<f64>) -> Result<Evaluation<T>> {
        let m = self.counts(&shares);
        let psi = self.kernels.assemble_psi(self.system, &m);
        let chol = Cholesky::with_context(&psi, "information operator")?;
        let u = chol.solve(self.alpha);
        let mut variance = T::zero();
        for i in 0..u.len() {
            variance += self.alpha[i] * u[i];
        }
        let energies = (0..self.system.len())
            .map(|k| self.kernels.group_energy(self.system, k, &u))
            .collect();
        Ok(Evaluation {
            shares,
            variance,
            energies,
        })
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite shares"));
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - 1.0) / (i as f64 + 1.0);
        if v - t > 0.0 {
            tau = t;
        }
    }
    x.iter().map(|&v| (v - tau).max(0.0)).collect()
}

fn run_from_start<T: Real>(
    ws: &Workspace<T>,
    start_shares: Vec<f64>,
    opts: &SolverOptions,
) -> Result<(Evaluation<T>, usize, bool)> {
    let mut shares = start_shares;
    ws.clamp(&mut shares);
    let mut cur = ws.evaluate(shares)?;
    let mut step = 1.0f64;
    let mut quiet = 0usize;
    let mut converged = false;
    let mut iters = 0usize;
    let p = ws.budget;

    for it in 0..opts.max_iters {
        iters = it + 1;
        let prev_var = cur.variance;

        // Exact rebalance at the current coefficients: share_k ∝ m_k √(g_k W_k).
        let m = ws.counts(&cur.shares);
        let mut rebalance: Vec<f64> = (0..ws.system.len())
            .map(|k| m[k] * (cur.energies[k].max_val(T::zero()) * T::from_f64(ws.system.cost(k))).sqrt().to_f64())
            .collect();
        let total: f64 = rebalance.iter().sum();
        let mut best: Option<Evaluation<T>> = None;
        if total > 0.0 && total.is_finite() {
            for x in rebalance.iter_mut() {
                *x /= total;
            }
            ws.clamp(&mut rebalance);
            if let Ok(cand) = ws.evaluate(rebalance) {
                if cand.variance < cur.variance {
                    best = Some(cand);
                }
            }
        }

        // Projected-gradient candidate with Armijo backtracking, in cost
        // shares: ∂Var/∂x_k = −g_k p / W_k.
        let grad: Vec<f64> = (0..ws.system.len())
            .map(|k| -cur.energies[k].to_f64() * p / ws.system.cost(k))
            .collect();
        let gmax = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
        if gmax > 0.0 && gmax.is_finite() {
            let mut eta = (step * 4.0).min(1e3 / gmax);
            for _ in 0..40 {
                let trial: Vec<f64> = cur
                    .shares
                    .iter()
                    .zip(&grad)
                    .map(|(&x, &g)| x - eta * g)
                    .collect();
                let mut proj = project_simplex(&trial);
                ws.clamp(&mut proj);
                let decrease: f64 = proj
                    .iter()
                    .zip(&cur.shares)
                    .zip(&grad)
                    .map(|((&xn, &xo), &g)| g * (xn - xo))
                    .sum();
                if decrease >= 0.0 {
                    eta *= 0.25;
                    continue;
                }
                match ws.evaluate(proj) {
                    Ok(cand) => {
                        let sufficient = cur.variance.to_f64() + 1e-4 * decrease;
                        if cand.variance.to_f64() <= sufficient {
                            step = eta;
                            let better_than_mm = best
                                .as_ref()
                                .map_or(true, |b| cand.variance < b.variance);
                            if cand.variance < cur.variance && better_than_mm {
                                best = Some(cand);
                            }
                            break;
                        }
                    }
                    Err(_) => {}
                }
                eta *= 0.25;
            }
        }

        if let Some(next) = best {
            cur = next;
        }
        let improvement = (prev_var - cur.variance).to_f64();
        if improvement <= opts.rel_tol * cur.variance.to_f64().abs() {
            quiet += 1;
            if quiet >= 3 {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }
    Ok((cur, iters, converged))
}

/// Telescoping start: the closed-form allocation of the pair-difference
/// scheme over `{1}, {k−1,k}`, mapped into the group list; falls back to
/// uniform cost shares when those groups are not all present.
fn telescoping_start<T: Real>(
    system: &GroupSystem,
    cov: &Matrix<T>,
    budget: f64,
) -> Vec<f64> {
    let n = system.n_levels();
    let k_total = system.len();
    let uniform = vec![1.0 / k_total as f64; k_total];
    let mut positions = Vec::with_capacity(n);
    let mut variances = Vec::with_capacity(n);
    let mut costs = Vec::with_capacity(n);
    for level in 1..=n {
        let levels: Vec<usize> = if level == 1 {
            vec![1]
        } else {
            vec![level - 1, level]
        };
        let Some(pos) = system.position(&levels) else {
            return uniform;
        };
        let v = if level == 1 {
            cov[(0, 0)]
        } else {
            let (i, j) = (level - 1, level - 2);
            cov[(i, i)] + cov[(j, j)] - cov[(i, j)] - cov[(j, i)]
        };
        positions.push(pos);
        variances.push(v);
        costs.push(system.cost(pos));
    }
    let Ok((alloc, _)) = closed_form_allocation::<T>(&variances, &costs, budget) else {
        return uniform;
    };
    let mut shares = vec![0.0; k_total];
    for (idx, &pos) in positions.iter().enumerate() {
        shares[pos] = alloc.m[idx] * system.cost(pos) / budget;
    }
    shares
}

/// Minimize `αᵀ Ψ(m)⁻¹ α` over `m ≥ 0`, `Σ m_k W_k = p`.
///
/// The coupling bound is encoded in the group system itself (groups beyond
/// the bound are simply not enumerated). The budget is consumed exactly;
/// the objective is monotone decreasing in every count, so nothing is
/// gained by leaving budget unused.
pub fn saob_allocate<T: Real>(
    system: &GroupSystem,
    cov: &Matrix<T>,
    alpha: &[T],
    budget: f64,
    opts: &SolverOptions,
) -> Result<SaobSolution<T>> {
    opts.validate()?;
    if !(budget > 0.0) {
        return Err(Error::invalid("saob: budget must be positive"));
    }
    if alpha.len() != system.n_levels() {
        return Err(Error::invalid("saob: bias vector length mismatch"));
    }
    if alpha.iter().all(|&a| a == T::zero()) {
        return Err(Error::invalid("saob: bias vector must be nonzero"));
    }
    let mut covered = vec![false; system.n_levels()];
    for g in system.groups() {
        for &l in g.levels() {
            covered[l - 1] = true;
        }
    }
    if covered.iter().any(|c| !c) {
        return Err(Error::infeasible(
            "saob: the admissible groups do not cover every level",
        ));
    }

    let kernels = GroupKernels::new(system, cov)?;
    let flagged = kernels.flagged.clone();
    let ws = Workspace {
        system,
        kernels,
        alpha,
        budget,
        floor: opts.floor,
    };

    let mut starts: Vec<Vec<f64>> = vec![telescoping_start(system, cov, budget)];
    for warm in &opts.warm_starts {
        if warm.len() == system.len() && warm.iter().all(|&m| m.is_finite() && m >= 0.0) {
            let total: f64 = warm
                .iter()
                .zip(system.costs())
                .map(|(m, w)| m * w)
                .sum();
            if total > 0.0 {
                starts.push(
                    warm.iter()
                        .zip(system.costs())
                        .map(|(m, w)| m * w / total)
                        .collect(),
                );
            }
        }
    }

    let mut best: Option<Evaluation<T>> = None;
    let mut total_iters = 0usize;
    let mut all_converged = true;
    for start in starts {
        let (eval, iters, converged) = run_from_start(&ws, start, opts)?;
        total_iters += iters;
        all_converged &= converged;
        if best.as_ref().map_or(true, |b| eval.variance < b.variance) {
            best = Some(eval);
        }
    }
    let best = best.expect("at least one start");

    if !all_converged {
        return Err(Error::Stalled {
            iterations: total_iters,
            best_m: ws.counts(&best.shares),
            best_variance: best.variance.to_f64(),
        });
    }

    // Prune inactive groups, restore the exact budget, and re-verify the
    // solution with a residual-checked solve.
    let pruned = finalize(&ws, &best, opts)?;
    let kkt = kkt_residuals(&ws, &pruned, opts);
    let m = ws.counts(&pruned.shares);
    let betas = crate::blue::betas_from_solution(
        system,
        &ws.kernels,
        &m,
        &final_solution_vector(&ws, &m)?,
    );
    let allocation = Allocation::new(m, system)?;
    Ok(SaobSolution {
        allocation,
        variance: pruned.variance,
        betas,
        iterations: total_iters,
        converged: true,
        kkt,
        flagged_groups: flagged,
    })
}

fn final_solution_vector<T: Real>(ws: &Workspace<T>, m: &[f64]) -> Result<Vec<T>> {
    let psi = ws.kernels.assemble_psi(ws.system, m);
    solve_spd_checked(&psi, ws.alpha, crate::blue::SOLVE_RTOL, "information operator")
}

fn finalize<T: Real>(
    ws: &Workspace<T>,
    best: &Evaluation<T>,
    opts: &SolverOptions,
) -> Result<Evaluation<T>> {
    let mut shares: Vec<f64> = best
        .shares
        .iter()
        .map(|&x| if x < opts.activity_threshold { 0.0 } else { x })
        .collect();
    let total: f64 = shares.iter().sum();
    if total > 0.0 {
        for x in shares.iter_mut() {
            *x /= total;
        }
        let m = ws.counts(&shares);
        let psi = ws.kernels.assemble_psi(ws.system, &m);
        if let Ok(chol) = Cholesky::with_context(&psi, "information operator") {
            let u = chol.solve(ws.alpha);
            let mut variance = T::zero();
            for i in 0..u.len() {
                variance += ws.alpha[i] * u[i];
            }
            if variance <= best.variance || (variance - best.variance).to_f64()
                <= 1e-9 * best.variance.to_f64().abs()
            {
                let energies = (0..ws.system.len())
                    .map(|k| ws.kernels.group_energy(ws.system, k, &u))
                    .collect();
                return Ok(Evaluation {
                    shares,
                    variance,
                    energies,
                });
            }
        }
    }
    // Pruning lost coverage or measurably hurt the objective; keep the
    // floored solution.
    Ok(Evaluation {
        shares: best.shares.clone(),
        variance: best.variance,
        energies: best.energies.clone(),
    })
}

fn kkt_residuals<T: Real>(
    ws: &Workspace<T>,
    eval: &Evaluation<T>,
    opts: &SolverOptions,
) -> KktResiduals {
    let variance = eval.variance.to_f64();
    let mut kkt = KktResiduals::default();
    if !(variance > 0.0) {
        return kkt;
    }
    // With multiplier λ = Var/p, the normalized ratio g_k p/(Var W_k) is 1
    // on active groups and at most 1 elsewhere.
    for (k, &share) in eval.shares.iter().enumerate() {
        let ratio = eval.energies[k].to_f64() * ws.budget / (variance * ws.system.cost(k));
        if share > opts.activity_threshold {
            kkt.stationarity = kkt.stationarity.max((ratio - 1.0).abs());
        } else {
            kkt.dual_feasibility = kkt.dual_feasibility.max((ratio - 1.0).max(0.0));
            kkt.complementarity = kkt.complementarity.max(share);
        }
    }
    kkt
}

/// Budget needed for the optimal allocation to hit a target variance, using
/// `Var(c·m) = Var(m)/c`: solve once at unit budget and rescale.
pub fn budget_for_variance<T: Real>(
    system: &GroupSystem,
    cov: &Matrix<T>,
    alpha: &[T],
    target_variance: f64,
    opts: &SolverOptions,
) -> Result<(f64, SaobSolution<T>)> {
    if !(target_variance > 0.0) {
        return Err(Error::invalid("target variance must be positive"));
    }
    let unit = saob_allocate(system, cov, alpha, 1.0, opts)?;
    let var1 = unit.variance.to_f64();
    let budget = var1 / target_variance;
    let mut scaled = unit;
    for mk in &mut scaled.allocation.m {
        *mk *= budget;
    }
    scaled.allocation.cost *= budget;
    scaled.variance = scaled.variance / T::from_f64(budget);
    Ok((budget, scaled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blue::{assemble_psi, blue_variance};
    use crate::family::{CostModel, ExpansionFamily};
    use crate::groups::enumerate_groups;
    use crate::num::DD;

    #[test]
    fn closed_form_single_group() {
        let (alloc, obj) = closed_form_allocation::<f64>(&[3.0], &[2.0], 10.0).unwrap();
        assert!((alloc.m[0] - 5.0).abs() < 1e-14);
        assert!((obj - 3.0 * 2.0 / 10.0).abs() < 1e-14);
    }

    #[test]
    fn closed_form_hand_example() {
        // σ² = (4,1), W = (1,4), p = 8: √(σ²/W) = (2, 0.5), √(σ²W) = (2,2),
        // so m* = (4,1) and J = 16/8 = 2.
        let (alloc, obj) = closed_form_allocation::<f64>(&[4.0, 1.0], &[1.0, 4.0], 8.0).unwrap();
        assert!((alloc.m[0] - 4.0).abs() < 1e-14);
        assert!((alloc.m[1] - 1.0).abs() < 1e-14);
        assert!((obj - 2.0).abs() < 1e-14);
        assert!((alloc.cost - 8.0).abs() < 1e-14);
    }

    #[test]
    fn closed_form_budget_homogeneity() {
        let vars = [0.7, 2.5, 0.02];
        let costs = [1.0, 3.0, 11.0];
        let (a1, j1) = closed_form_allocation::<f64>(&vars, &costs, 5.0).unwrap();
        let (a2, j2) = closed_form_allocation::<f64>(&vars, &costs, 10.0).unwrap();
        assert!((j1 / j2 - 2.0).abs() < 1e-12);
        for (m1, m2) in a1.m.iter().zip(&a2.m) {
            assert!((2.0 * m1 - m2).abs() < 1e-12 * m2.max(1.0));
        }
    }

    #[test]
    fn closed_form_zero_variance_means_zero_samples() {
        let (alloc, _) = closed_form_allocation::<f64>(&[1.0, 0.0], &[1.0, 1.0], 4.0).unwrap();
        assert_eq!(alloc.m[1], 0.0);
        assert!((alloc.cost - 4.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_rejects_all_zero() {
        assert!(closed_form_allocation::<f64>(&[0.0, 0.0], &[1.0, 1.0], 4.0).is_err());
    }

    #[test]
    fn rounding_policy_examples() {
        let cost = CostModel::table(vec![1.0, 1.0]).unwrap();
        let sys = enumerate_groups(2, 1, &cost).unwrap();
        let alloc = Allocation::new(vec![3.2, 1e-9], &sys).unwrap();
        let rounded = round_allocation(&alloc, &sys, RoundingPolicy::Ceil, 1e-8);
        assert_eq!(rounded.m, vec![4.0, 0.0]);
        let unchanged = round_allocation(&alloc, &sys, RoundingPolicy::None, 1e-8);
        assert_eq!(unchanged.m, alloc.m);
        let integral = Allocation::new(vec![4.0, 2.0], &sys).unwrap();
        let still = round_allocation(&integral, &sys, RoundingPolicy::Ceil, 1e-8);
        assert_eq!(still.m, vec![4.0, 2.0]);
    }

    #[test]
    fn single_level_is_plain_monte_carlo() {
        let cost = CostModel::table(vec![2.0]).unwrap();
        let sys = enumerate_groups(1, 1, &cost).unwrap();
        let cov = Matrix::from_f64_rows(1, 1, &[3.0]);
        let sol = saob_allocate(&sys, &cov, &[1.0], 10.0, &SolverOptions::default()).unwrap();
        assert!((sol.allocation.m[0] - 5.0).abs() < 1e-9);
        assert!((sol.variance - 3.0 * 2.0 / 10.0).abs() < 1e-10);
    }

    /// Brute-force oracle: grid over the two free cost shares of the
    /// three-group system at resolution 1e-3, then local refinement.
    fn grid_oracle(cov: &Matrix<f64>, sys: &GroupSystem, alpha: &[f64], p: f64) -> f64 {
        let eval = |x1: f64, x2: f64| -> f64 {
            let x3 = 1.0 - x1 - x2;
            if x3 < 0.0 {
                return f64::INFINITY;
            }
            let m: Vec<f64> = [x1, x2, x3]
                .iter()
                .zip(sys.costs())
                .map(|(x, w)| x * p / w)
                .collect();
            let alloc = match Allocation::new(m, sys) {
                Ok(a) => a,
                Err(_) => return f64::INFINITY,
            };
            let psi = match assemble_psi(sys, cov, &alloc) {
                Ok(p) => p,
                Err(_) => return f64::INFINITY,
            };
            match blue_variance(&psi, alpha) {
                Ok(v) => v,
                Err(_) => f64::INFINITY,
            }
        };
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let n = 1000usize;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let (x1, x2) = (i as f64 / n as f64, j as f64 / n as f64);
                let v = eval(x1, x2);
                if v < best.0 {
                    best = (v, x1, x2);
                }
            }
        }
        // Local refinement: shrink a box around the incumbent.
        let mut half = 1.0 / n as f64;
        for _ in 0..14 {
            let (_, cx, cy) = best;
            let steps = 8;
            for i in 0..=steps {
                for j in 0..=steps {
                    let x1 = (cx - half + 2.0 * half * i as f64 / steps as f64).max(0.0);
                    let x2 = (cy - half + 2.0 * half * j as f64 / steps as f64).max(0.0);
                    if x1 + x2 > 1.0 {
                        continue;
                    }
                    let v = eval(x1, x2);
                    if v < best.0 {
                        best = (v, x1, x2);
                    }
                }
            }
            half *= 0.4;
        }
        best.0
    }

    #[test]
    fn two_level_solution_matches_grid_oracle() {
        let cov = Matrix::from_f64_rows(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let cost = CostModel::table(vec![1.0, 4.0]).unwrap();
        let sys = enumerate_groups(2, 2, &cost).unwrap();
        let alpha = [0.0, 1.0];
        let p = 100.0;
        let sol = saob_allocate(&sys, &cov, &alpha, p, &SolverOptions::default()).unwrap();
        let oracle = grid_oracle(&cov, &sys, &alpha, p);
        let rel = (sol.variance - oracle).abs() / oracle;
        assert!(rel < 1e-6, "solver {} vs oracle {} (rel {rel:e})", sol.variance, oracle);
        assert!((sol.allocation.cost - p).abs() < 1e-9 * p);
    }

    #[test]
    fn solution_beats_telescoping_start_and_keeps_budget() {
        let (family, cost) = ExpansionFamily::toy_exp(0);
        let md = family.moments::<DD>();
        let sys = enumerate_groups(4, 3, &cost).unwrap();
        let alpha: Vec<DD> = (0..4)
            .map(|i| if i == 3 { DD::ONE } else { DD::ZERO })
            .collect();
        let p = 100.0;
        let sol = saob_allocate(&sys, &md.cov, &alpha, p, &SolverOptions::default()).unwrap();
        assert!((sol.allocation.cost - p).abs() < 1e-8 * p);

        // The telescoping initializer is feasible, so the optimum is at
        // least as good.
        let start = telescoping_start(&sys, &md.cov, p);
        let m0: Vec<f64> = start
            .iter()
            .zip(sys.costs())
            .map(|(x, w)| x * p / w)
            .collect();
        let a0 = Allocation::new(m0, &sys).unwrap();
        let v0 = blue_variance(&assemble_psi(&sys, &md.cov, &a0).unwrap(), &alpha).unwrap();
        assert!(sol.variance.to_f64() <= v0.to_f64() * (1.0 + 1e-12));

        // Unbiasedness of the extracted coefficients.
        for i in 0..4 {
            let mut s = DD::ZERO;
            for beta in &sol.betas {
                s += beta[i];
            }
            assert!((s - alpha[i]).abs().to_f64() < 1e-10);
        }
        // KKT residuals at the reported point.
        assert!(sol.kkt.stationarity < 1e-5, "stationarity {}", sol.kkt.stationarity);
        assert!(sol.kkt.dual_feasibility < 1e-5);
        assert!(sol.kkt.complementarity <= 1e-8);
    }

    #[test]
    fn homogeneity_of_saob_solutions() {
        let (family, cost) = ExpansionFamily::toy_exp(1);
        let md = family.moments::<DD>();
        let sys = enumerate_groups(4, 2, &cost).unwrap();
        let alpha: Vec<DD> = (0..4)
            .map(|i| if i == 3 { DD::ONE } else { DD::ZERO })
            .collect();
        let s1 = saob_allocate(&sys, &md.cov, &alpha, 50.0, &SolverOptions::default()).unwrap();
        let s2 = saob_allocate(&sys, &md.cov, &alpha, 100.0, &SolverOptions::default()).unwrap();
        let ratio = s1.variance.to_f64() / s2.variance.to_f64();
        assert!((ratio - 2.0).abs() < 1e-6, "ratio {ratio}");
        for (m1, m2) in s1.allocation.m.iter().zip(&s2.allocation.m) {
            if *m2 > 1e-6 {
                assert!((2.0 * m1 / m2 - 1.0).abs() < 1e-4, "{m1} vs {m2}");
            }
        }
    }

    #[test]
    fn budget_for_variance_hits_target() {
        let (family, cost) = ExpansionFamily::toy_exp(0);
        let md = family.moments::<DD>();
        let sys = enumerate_groups(4, 2, &cost).unwrap();
        let alpha: Vec<DD> = (0..4)
            .map(|i| if i == 3 { DD::ONE } else { DD::ZERO })
            .collect();
        let target = 1e-3;
        let (p, sol) =
            budget_for_variance(&sys, &md.cov, &alpha, target, &SolverOptions::default())
                .unwrap();
        assert!((sol.variance.to_f64() - target).abs() < 1e-8 * target);
        assert!((sol.allocation.cost - p).abs() < 1e-8 * p);
        // Doubling the target halves the budget.
        let (p2, _) =
            budget_for_variance(&sys, &md.cov, &alpha, 2.0 * target, &SolverOptions::default())
                .unwrap();
        assert!((p / p2 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn missing_coverage_is_infeasible() {
        let cost = CostModel::table(vec![1.0, 1.0]).unwrap();
        let sys = GroupSystem::from_groups(
            vec![crate::groups::ModelGroup::new(vec![1]).unwrap()],
            &cost,
            2,
        )
        .unwrap();
        let cov = Matrix::<f64>::identity(2);
        let err = saob_allocate(&sys, &cov, &[0.0, 1.0], 10.0, &SolverOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }
}
