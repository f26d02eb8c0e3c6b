//! Complexity analysis and study drivers: closed-form cost-bound branches,
//! MSE-targeted sizing of each estimator, cost-versus-accuracy sweeps with
//! slope fits, and the coefficient/variance convergence study comparing the
//! allocation-optimal estimator against extrapolated telescopes.

use crate::allocation::{
    budget_for_variance, closed_form_allocation, round_allocation, saob_allocate,
    RoundingPolicy, SaobSolution, SolverOptions,
};
use crate::blue::EstimatorScheme;
use crate::error::{Error, Result};
use crate::extrapolation::{
    mc_scheme, mlmc_scheme, re_scheme, re_scheme_unit_bias, re_vectors, weighted_re_scheme,
};
use crate::family::{CostModel, ExpansionFamily};
use crate::groups::enumerate_groups;
use crate::num::Real;

/// Which side of `γ^Cost` versus `γ^Var` the complexity bound lands on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostBranch {
    Below,
    Equal,
    Above,
}

/// Exponents of the two additive terms of the cost bound
/// `φ(ε) = ε^{-γc/γb} + ε^{statistical}` (times `log²ε` on the equal
/// branch). The first term accounts for ceiling the sample counts, the
/// second for the variance constraint.
#[derive(Clone, Copy, Debug)]
pub struct CostBranchPrediction {
    pub gamma_bias: f64,
    pub gamma_var: f64,
    pub gamma_cost: f64,
    pub branch: CostBranch,
    pub rounding_exponent: f64,
    pub statistical_exponent: f64,
    pub log_squared: bool,
}

/// Closed-form complexity branches for given bias, variance and cost rates.
pub fn predicted_cost_bound(
    gamma_bias: f64,
    gamma_var: f64,
    gamma_cost: f64,
    eps: f64,
) -> Result<CostBranchPrediction> {
    if !(gamma_bias > 0.0) || !(gamma_cost > 0.0) || !(gamma_var >= 0.0) {
        return Err(Error::invalid(
            "cost bound: need gamma_bias, gamma_cost > 0 and gamma_var >= 0",
        ));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("cost bound: eps must lie in (0, 1)"));
    }
    let (branch, statistical_exponent, log_squared) = if gamma_cost < gamma_var {
        (CostBranch::Below, -2.0, false)
    } else if gamma_cost == gamma_var {
        (CostBranch::Equal, -2.0, true)
    } else {
        (
            CostBranch::Above,
            -2.0 - (gamma_cost - gamma_var) / gamma_bias,
            false,
        )
    };
    Ok(CostBranchPrediction {
        gamma_bias,
        gamma_var,
        gamma_cost,
        branch,
        rounding_exponent: -gamma_cost / gamma_bias,
        statistical_exponent,
        log_squared,
    })
}

/// Estimator selector used by the drivers and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Mc,
    Mlmc,
    /// Extrapolated telescope of the given order.
    Re { order: usize },
    /// Weighted telescope with independent variance and bias orders.
    WeightedRe { variance_order: usize, bias_order: usize },
    /// Allocation-optimal estimator; `None` couples arbitrarily many models.
    Saob { coupling: Option<usize> },
}

/// Bias target of the estimator sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiasTarget {
    /// `α = e_L`: estimate the finest-level mean.
    FinestLevel,
    /// `α = v^{L,t}`: estimate the order-`t` extrapolated mean.
    ReOrder(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub bias: BiasTarget,
}

impl EstimatorSpec {
    pub fn id(&self) -> String {
        let kind = match self.kind {
            EstimatorKind::Mc => "mc".to_string(),
            EstimatorKind::Mlmc => "mlmc".to_string(),
            EstimatorKind::Re { order } => format!("re{order}"),
            EstimatorKind::WeightedRe {
                variance_order,
                bias_order,
            } => format!("wre{variance_order}_{bias_order}"),
            EstimatorKind::Saob { coupling: Some(q) } => format!("saob{q}"),
            EstimatorKind::Saob { coupling: None } => "saob".to_string(),
        };
        match self.bias {
            BiasTarget::FinestLevel => kind,
            BiasTarget::ReOrder(t) => format!("{kind}@v{t}"),
        }
    }

    /// Coupling number of the estimator (groups per shared event).
    pub fn coupling(&self, n_levels: usize) -> usize {
        match self.kind {
            EstimatorKind::Mc => 1,
            EstimatorKind::Mlmc => 2,
            EstimatorKind::Re { order } => order,
            EstimatorKind::WeightedRe { variance_order, .. } => variance_order,
            EstimatorKind::Saob { coupling } => coupling.unwrap_or(n_levels).min(n_levels),
        }
    }

    /// Reject kind/target combinations that have no scheme construction.
    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.bias) {
            (EstimatorKind::Mc | EstimatorKind::Mlmc, BiasTarget::ReOrder(_)) => Err(
                Error::invalid("mc and mlmc estimate the finest-level mean only"),
            ),
            (EstimatorKind::Re { order }, BiasTarget::ReOrder(t)) if t != order => {
                Err(Error::invalid(format!(
                    "an order-{order} telescope targets the order-{order} mean, not order {t}"
                )))
            }
            (
                EstimatorKind::WeightedRe { bias_order, .. },
                BiasTarget::ReOrder(t),
            ) if t != bias_order => Err(Error::invalid(format!(
                "weighted telescope with bias order {bias_order} cannot target order {t}"
            ))),
            (EstimatorKind::WeightedRe { bias_order, .. }, BiasTarget::FinestLevel)
                if bias_order != 2 =>
            {
                Err(Error::invalid(
                    "a weighted telescope targets the finest-level mean only for bias order 2",
                ))
            }
            _ => Ok(()),
        }
    }
}

/// One MSE-targeted sizing of one estimator at one accuracy.
#[derive(Clone, Debug)]
pub struct SweepRecord {
    pub estimator: String,
    pub eps: f64,
    pub level: usize,
    pub cost_continuous: f64,
    pub cost_rounded: f64,
    pub variance: f64,
    pub bias_sq: f64,
    pub mse: f64,
}

/// Ordinary least squares fit of supplied points.
#[derive(Clone, Copy, Debug)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    /// Residual sum of squares.
    pub residual: f64,
}

/// OLS on the supplied coordinates; needs three points and non-degenerate
/// abscissae.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<LineFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::invalid("rate fit: need at least three points"));
    }
    let nf = n as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let xbar = sx / nf;
    let ybar = sy / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - xbar) * (p.0 - xbar)).sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return Err(Error::invalid("rate fit: degenerate abscissae"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let residual: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let stderr_slope = if n > 2 {
        (residual / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LineFit {
        slope,
        intercept,
        stderr_slope,
        residual,
    })
}

/// Bias vector of the estimator at `n_levels` levels.
pub fn bias_vector<T: Real>(
    bias: BiasTarget,
    n_levels: usize,
    family: &ExpansionFamily,
) -> Result<Vec<T>> {
    match bias {
        BiasTarget::FinestLevel => {
            let mut alpha = vec![T::zero(); n_levels];
            alpha[n_levels - 1] = T::one();
            Ok(alpha)
        }
        BiasTarget::ReOrder(t) => {
            let coeffs = re_vectors::<T>(n_levels, family.rates(), t)?;
            Ok(coeffs.vector(n_levels).to_vec())
        }
    }
}

/// `|αᵀμ − E[Z]|` for the estimator's bias target at the given level count.
fn analytic_bias<T: Real>(
    family: &ExpansionFamily,
    bias: BiasTarget,
    n_levels: usize,
) -> Result<T> {
    let md = family.truncated(n_levels)?.moments::<T>();
    let alpha = bias_vector::<T>(bias, n_levels, family)?;
    Ok(crate::extrapolation::re_bias(&alpha, &md))
}

/// Fixed-coefficient scheme of the requested kind with unit counts.
fn unit_scheme<T: Real>(
    kind: EstimatorKind,
    n_levels: usize,
    family: &ExpansionFamily,
    cost: &CostModel,
) -> Result<EstimatorScheme<T>> {
    let ones = vec![1.0; n_levels];
    match kind {
        EstimatorKind::Mc => mc_scheme(n_levels, cost, 1.0),
        EstimatorKind::Mlmc => mlmc_scheme(n_levels, cost, &ones),
        EstimatorKind::Re { order } => re_scheme(n_levels, family.rates(), order, cost, &ones),
        EstimatorKind::WeightedRe {
            variance_order,
            bias_order,
        } => weighted_re_scheme(
            n_levels,
            family.rates(),
            variance_order,
            bias_order,
            cost,
            &ones,
        ),
        EstimatorKind::Saob { .. } => Err(Error::invalid(
            "the allocation-optimal estimator has no fixed coefficients",
        )),
    }
}

/// The scheme variant used when plain estimators of the finest-level mean
/// are compared: telescopes are closed against `α = e_L`.
fn unit_bias_scheme<T: Real>(
    kind: EstimatorKind,
    n_levels: usize,
    family: &ExpansionFamily,
    cost: &CostModel,
) -> Result<EstimatorScheme<T>> {
    let ones = vec![1.0; n_levels];
    match kind {
        EstimatorKind::Re { order } => {
            re_scheme_unit_bias(n_levels, family.rates(), order, cost, &ones)
        }
        _ => unit_scheme(kind, n_levels, family, cost),
    }
}

fn fixed_scheme_for_target<T: Real>(
    spec: &EstimatorSpec,
    n_levels: usize,
    family: &ExpansionFamily,
    cost: &CostModel,
) -> Result<EstimatorScheme<T>> {
    match spec.bias {
        BiasTarget::FinestLevel => unit_bias_scheme(spec.kind, n_levels, family, cost),
        BiasTarget::ReOrder(_) => unit_scheme(spec.kind, n_levels, family, cost),
    }
}

/// Group variances `σ_k² = (β^k)ᵀ C β^k` of a fixed scheme.
fn group_variances<T: Real>(
    scheme: &EstimatorScheme<T>,
    cov: &crate::linalg::Matrix<T>,
) -> Vec<T> {
    scheme
        .betas
        .iter()
        .map(|beta| cov.quad_form(beta, beta))
        .collect()
}

/// Warm starts for the allocation solver derived from the comparison
/// schemes that share the bias target; feasible points can only improve
/// the returned optimum.
fn scheme_warm_starts<T: Real>(
    system: &crate::groups::GroupSystem,
    family: &ExpansionFamily,
    cost: &CostModel,
    bias: BiasTarget,
    coupling: usize,
    cov: &crate::linalg::Matrix<T>,
    budget: f64,
) -> Vec<Vec<f64>> {
    let n_levels = system.n_levels();
    let mut candidates: Vec<EstimatorKind> = Vec::new();
    match bias {
        BiasTarget::FinestLevel => {
            if coupling >= 2 {
                candidates.push(EstimatorKind::Mlmc);
            }
            let max_order = coupling.min(family.rates().order());
            if max_order >= 3 {
                candidates.push(EstimatorKind::Re { order: max_order });
            }
        }
        BiasTarget::ReOrder(t) => {
            if t >= 2 && t <= coupling {
                candidates.push(EstimatorKind::Re { order: t });
            }
        }
    }
    let mut starts = Vec::new();
    for kind in candidates {
        let spec = EstimatorSpec { kind, bias };
        let Ok(scheme) = fixed_scheme_for_target::<T>(&spec, n_levels, family, cost) else {
            continue;
        };
        let sigmas = group_variances(&scheme, cov);
        let costs: Vec<f64> = (0..scheme.system.len())
            .map(|k| scheme.system.cost(k))
            .collect();
        let Ok((alloc, _)) = closed_form_allocation(&sigmas, &costs, budget) else {
            continue;
        };
        let mut m = vec![0.0; system.len()];
        let mut mapped = true;
        for (k, group) in scheme.system.groups().iter().enumerate() {
            if alloc.m[k] == 0.0 {
                continue;
            }
            match system.position(group.levels()) {
                Some(pos) => m[pos] += alloc.m[k],
                None => {
                    mapped = false;
                    break;
                }
            }
        }
        if mapped {
            starts.push(m);
        }
    }
    starts
}

/// Allocation-optimal solve for a bias target with scheme-derived warm
/// starts folded in.
pub fn saob_for_target<T: Real>(
    family: &ExpansionFamily,
    cost: &CostModel,
    coupling: usize,
    bias: BiasTarget,
    budget: f64,
    opts: &SolverOptions,
) -> Result<SaobSolution<T>> {
    let n_levels = family.levels();
    let md = family.moments::<T>();
    let system = enumerate_groups(n_levels, coupling, cost)?;
    let alpha = bias_vector::<T>(bias, n_levels, family)?;
    let mut solver_opts = opts.clone();
    solver_opts.warm_starts.extend(scheme_warm_starts(
        &system, family, cost, bias, coupling, &md.cov, budget,
    ));
    saob_allocate(&system, &md.cov, &alpha, budget, &solver_opts)
}

/// Choose the smallest level count whose squared bias fits the target; a
/// family with identically zero bias pins the level at the maximum and
/// spends the whole error budget on variance.
fn choose_level<T: Real>(
    family: &ExpansionFamily,
    bias: BiasTarget,
    eps: f64,
    l_max: usize,
) -> Result<(usize, f64, f64)> {
    let mut biases = Vec::with_capacity(l_max);
    for n in 1..=l_max {
        biases.push(analytic_bias::<T>(family, bias, n)?.to_f64());
    }
    if biases.iter().all(|&b| b == 0.0) {
        return Ok((l_max, eps * eps, 0.0));
    }
    let half = eps * eps / 2.0;
    for (idx, &b) in biases.iter().enumerate() {
        if b * b <= half {
            return Ok((idx + 1, half, b));
        }
    }
    Err(Error::infeasible(format!(
        "bias^2 stays above eps^2/2 = {half:e} for every level count up to {l_max}"
    )))
}

/// Size one estimator for mean-square error `ε²`, splitting the error
/// budget evenly between squared bias and variance.
pub fn mse_target_driver<T: Real>(
    family: &ExpansionFamily,
    cost: &CostModel,
    spec: &EstimatorSpec,
    eps: f64,
    policy: RoundingPolicy,
    opts: &SolverOptions,
) -> Result<SweepRecord> {
    spec.validate()?;
    if !(eps > 0.0) {
        return Err(Error::invalid("mse target: eps must be positive"));
    }
    let l_max = family.levels();
    let (level, var_target, bias) = choose_level::<T>(family, spec.bias, eps, l_max)?;
    sized_record::<T>(family, cost, spec, eps, level, var_target, bias, policy, opts)
}

/// One record of the per-level study mode: the level is fixed, the variance
/// target is set equal to the squared bias (MSE = 2·bias²).
pub fn level_mse_driver<T: Real>(
    family: &ExpansionFamily,
    cost: &CostModel,
    spec: &EstimatorSpec,
    level: usize,
    policy: RoundingPolicy,
    opts: &SolverOptions,
) -> Result<SweepRecord> {
    spec.validate()?;
    let bias = analytic_bias::<T>(family, spec.bias, level)?.to_f64();
    if !(bias > 0.0) {
        return Err(Error::infeasible(
            "per-level study needs a family with nonzero bias",
        ));
    }
    let var_target = bias * bias;
    let eps = (2.0 * var_target).sqrt();
    sized_record::<T>(family, cost, spec, eps, level, var_target, bias, policy, opts)
}

#[allow(clippy::too_many_arguments)]
fn sized_record<T: Real>(
    family: &ExpansionFamily,
    cost: &CostModel,
    spec: &EstimatorSpec,
    eps: f64,
    level: usize,
    var_target: f64,
    bias: f64,
    policy: RoundingPolicy,
    opts: &SolverOptions,
) -> Result<SweepRecord> {
    let truncated = family.truncated(level)?;
    let (system, alloc) = match spec.kind {
        EstimatorKind::Saob { .. } => {
            let coupling = spec.coupling(level);
            let md = truncated.moments::<T>();
            let system = enumerate_groups(level, coupling, cost)?;
            let alpha = bias_vector::<T>(spec.bias, level, &truncated)?;
            let mut solver_opts = opts.clone();
            // budget_for_variance solves at unit budget first; scale the
            // warm starts to match.
            solver_opts.warm_starts.extend(scheme_warm_starts(
                &system, &truncated, cost, spec.bias, coupling, &md.cov, 1.0,
            ));
            let (_, sol) =
                budget_for_variance(&system, &md.cov, &alpha, var_target, &solver_opts)?;
            (system, sol.allocation)
        }
        _ => {
            let scheme = fixed_scheme_for_target::<T>(spec, level, &truncated, cost)?;
            let md = truncated.moments::<T>();
            let sigmas = group_variances(&scheme, &md.cov);
            let costs: Vec<f64> = (0..scheme.system.len())
                .map(|k| scheme.system.cost(k))
                .collect();
            // J(p) = J(1)/p, so the budget for the target is J(1)/target.
            let (_, j_unit) = closed_form_allocation(&sigmas, &costs, 1.0)?;
            let budget = (j_unit / T::from_f64(var_target)).to_f64();
            let (alloc, _) = closed_form_allocation(&sigmas, &costs, budget)?;
            (scheme.system.clone(), alloc)
        }
    };
    let rounded = round_allocation(&alloc, &system, policy, 1e-8);
    Ok(SweepRecord {
        estimator: spec.id(),
        eps,
        level,
        cost_continuous: alloc.cost,
        cost_rounded: rounded.cost,
        variance: var_target,
        bias_sq: bias * bias,
        mse: bias * bias + var_target,
    })
}

/// Fitted cost slope of one estimator over a sweep.
#[derive(Clone, Debug)]
pub struct SlopeFit {
    pub estimator: String,
    pub rounded: bool,
    pub slope: f64,
    pub stderr: f64,
}

/// Run every estimator across an accuracy grid and fit `log2 cost` against
/// `log2 ε`, with and without rounding.
pub fn cost_sweep<T: Real>(
    family: &ExpansionFamily,
    cost: &CostModel,
    specs: &[EstimatorSpec],
    eps_grid: &[f64],
    policy: RoundingPolicy,
    opts: &SolverOptions,
) -> Result<(Vec<SweepRecord>, Vec<SlopeFit>)> {
    if eps_grid.len() < 4 {
        return Err(Error::invalid("sweep: need at least four accuracy points"));
    }
    let lo = eps_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eps_grid.iter().cloned().fold(0.0f64, f64::max);
    if !(lo > 0.0) || hi / lo < 100.0 {
        return Err(Error::invalid(
            "sweep: accuracy grid must span at least two decades",
        ));
    }
    let mut records = Vec::new();
    let mut fits = Vec::new();
    for spec in specs {
        let mut these = Vec::new();
        for &eps in eps_grid {
            these.push(mse_target_driver::<T>(family, cost, spec, eps, policy, opts)?);
        }
        let cont: Vec<(f64, f64)> = these
            .iter()
            .map(|r| (r.eps.log2(), r.cost_continuous.log2()))
            .collect();
        let fit_c = fit_rate(&cont)?;
        fits.push(SlopeFit {
            estimator: spec.id(),
            rounded: false,
            slope: fit_c.slope,
            stderr: fit_c.stderr_slope,
        });
        let rnd: Vec<(f64, f64)> = these
            .iter()
            .map(|r| (r.eps.log2(), r.cost_rounded.log2()))
            .collect();
        let fit_r = fit_rate(&rnd)?;
        fits.push(SlopeFit {
            estimator: spec.id(),
            rounded: true,
            slope: fit_r.slope,
            stderr: fit_r.stderr_slope,
        });
        records.extend(these);
    }
    Ok((records, fits))
}

/// Comparison of the allocation-optimal estimator against the telescope of
/// the same coupling, both targeting the finest-level mean at equal budget
/// with fractional counts.
#[derive(Clone, Debug)]
pub struct TelescopeComparison<T> {
    pub order: usize,
    pub ell0: usize,
    /// Optimal-allocation variance of the telescope scheme.
    pub reference_variance: T,
    pub saob: SaobSolution<T>,
    /// Reference coefficients aligned to the solver's group list.
    pub reference_betas: Vec<Vec<T>>,
}

/// Solve both sides of the comparison at one accuracy shift.
pub fn compare_with_telescope<T: Real>(
    family: &ExpansionFamily,
    cost: &CostModel,
    order: usize,
    budget: f64,
    opts: &SolverOptions,
) -> Result<TelescopeComparison<T>> {
    let n_levels = family.levels();
    let md = family.moments::<T>();
    let ones = vec![1.0; n_levels];
    // Weighted telescope with bias order 2, i.e. the order-q scheme
    // retargeted at e_L; identical to MLMC for order 2.
    let reference: EstimatorScheme<T> =
        re_scheme_unit_bias(n_levels, family.rates(), order, cost, &ones)?;
    let sigmas = group_variances(&reference, &md.cov);
    let ref_costs: Vec<f64> = (0..reference.system.len())
        .map(|k| reference.system.cost(k))
        .collect();
    let (ref_alloc, reference_variance) = closed_form_allocation(&sigmas, &ref_costs, budget)?;
    let saob = {
        let system = enumerate_groups(n_levels, order, cost)?;
        let alpha = bias_vector::<T>(BiasTarget::FinestLevel, n_levels, family)?;
        let mut solver_opts = opts.clone();
        // The telescope's own allocation is feasible for the solver.
        let mut mapped = vec![0.0; system.len()];
        for (k, group) in reference.system.groups().iter().enumerate() {
            if let Some(pos) = system.position(group.levels()) {
                mapped[pos] += ref_alloc.m[k];
            }
        }
        solver_opts.warm_starts.push(mapped);
        solver_opts.warm_starts.extend(scheme_warm_starts(
            &system,
            family,
            cost,
            BiasTarget::FinestLevel,
            order,
            &md.cov,
            budget,
        ));
        saob_allocate(&system, &md.cov, &alpha, budget, &solver_opts)?
    };
    // Align the reference coefficients with the enumerated group order.
    let system = enumerate_groups(n_levels, order, cost)?;
    let mut reference_betas = vec![vec![T::zero(); n_levels]; system.len()];
    for (k, group) in reference.system.groups().iter().enumerate() {
        if let Some(pos) = system.position(group.levels()) {
            if ref_alloc.m[k] > 0.0 {
                reference_betas[pos] = reference.betas[k].clone();
            }
        }
    }
    Ok(TelescopeComparison {
        order,
        ell0: family.ell0(),
        reference_variance,
        saob,
        reference_betas,
    })
}

impl<T: Real> TelescopeComparison<T> {
    /// Euclidean distance between the two coefficient sets over the union
    /// of group identities.
    pub fn coefficient_distance(&self) -> f64 {
        let mut acc = T::zero();
        for (solved, reference) in self.saob.betas.iter().zip(&self.reference_betas) {
            for (s, r) in solved.iter().zip(reference) {
                let d = *s - *r;
                acc += d * d;
            }
        }
        acc.sqrt().to_f64()
    }

    /// Relative variance excess of the telescope over the optimal
    /// allocation at equal budget.
    pub fn variance_gap(&self) -> f64 {
        ((self.reference_variance - self.saob.variance) / self.saob.variance).to_f64()
    }
}

/// `r^q(ℓ0)`: coefficient distance between the allocation-optimal and
/// telescope estimators at equal budget.
pub fn coefficient_distance<T: Real>(
    family: &ExpansionFamily,
    cost: &CostModel,
    order: usize,
    budget: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    Ok(compare_with_telescope::<T>(family, cost, order, budget, opts)?.coefficient_distance())
}

/// `e^q(ℓ0)`: relative variance loss of the telescope against the
/// allocation-optimal estimator at equal budget.
pub fn variance_gap<T: Real>(
    family: &ExpansionFamily,
    cost: &CostModel,
    order: usize,
    budget: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    Ok(compare_with_telescope::<T>(family, cost, order, budget, opts)?.variance_gap())
}

/// One point of the convergence study.
#[derive(Clone, Debug)]
pub struct ConvergencePoint {
    pub ell0: usize,
    pub order: usize,
    pub coeff_distance: f64,
    pub variance_gap: f64,
}

/// Sweep the accuracy shift and coupling order of the toy comparison.
pub fn convergence_study<T: Real>(
    family: &ExpansionFamily,
    cost: &CostModel,
    orders: &[usize],
    ell0s: &[usize],
    budget: f64,
    opts: &SolverOptions,
) -> Result<Vec<ConvergencePoint>> {
    let mut out = Vec::with_capacity(orders.len() * ell0s.len());
    for &ell0 in ell0s {
        let shifted = family.with_ell0(ell0);
        for &order in orders {
            let cmp = compare_with_telescope::<T>(&shifted, cost, order, budget, opts)?;
            out.push(ConvergencePoint {
                ell0,
                order,
                coeff_distance: cmp.coefficient_distance(),
                variance_gap: cmp.variance_gap(),
            });
        }
    }
    Ok(out)
}
