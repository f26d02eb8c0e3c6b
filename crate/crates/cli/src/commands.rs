//! The six batch commands. Each reads the shared configuration, runs the
//! corresponding pipeline at the configured scalar precision and writes CSV
//! artifacts into the output directory.

use std::path::Path;

use mlblue::allocation::{round_allocation, RoundingPolicy, SaobSolution, SolverOptions};
use mlblue::analysis::{
    convergence_study, cost_sweep, level_mse_driver, saob_for_target, BiasTarget, EstimatorKind,
    EstimatorSpec,
};
use mlblue::blue::{assemble_psi, blue_variance, extract_beta, scheme_variance, EstimatorScheme};
use mlblue::extrapolation::{
    mc_scheme, mlmc_scheme, re_scheme, re_scheme_unit_bias, re_vectors, weighted_re_scheme,
};
use mlblue::family::{CostModel, ExpansionFamily};
use mlblue::groups::enumerate_groups;
use mlblue::num::Real;
use mlblue::simulation::{mse_report, run_estimator};
use mlblue::{Allocation, Matrix, DD};

use crate::config::{Precision, RunConfig, SweepMode};
use crate::csv::{num, CsvFile};
use crate::AppError;

/// Dispatch a closure at the configured scalar precision.
macro_rules! with_precision {
    ($cfg:expr, $fn:ident($($arg:expr),*)) => {
        match $cfg.precision()? {
            Precision::F64 => $fn::<f64>($($arg),*),
            Precision::Dd => $fn::<DD>($($arg),*),
        }
    };
}

pub fn cmd_moments(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    with_precision!(cfg, moments_impl(cfg, out))
}

fn moments_impl<T: Real>(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    let family = cfg.family()?;
    let md = family.moments::<T>();
    let n = family.levels();
    let mut csv = CsvFile::new(&["field", "i", "j", "value"]);
    for (i, mu) in md.mu.iter().enumerate() {
        csv.row(&[
            "mu".into(),
            (i + 1).to_string(),
            String::new(),
            num(mu.to_f64()),
        ]);
    }
    for i in 0..n {
        for j in 0..n {
            csv.row(&[
                "cov".into(),
                (i + 1).to_string(),
                (j + 1).to_string(),
                num(md.cov[(i, j)].to_f64()),
            ]);
        }
    }
    csv.row(&[
        "truth_mean".into(),
        String::new(),
        String::new(),
        num(md.truth_mean.to_f64()),
    ]);
    csv.write(out, "moments.csv")
}

/// Fixed-coefficient scheme for an estimator spec with placeholder counts.
fn build_fixed_scheme<T: Real>(
    spec: &EstimatorSpec,
    family: &ExpansionFamily,
    cost: &CostModel,
) -> Result<EstimatorScheme<T>, AppError> {
    let n = family.levels();
    let ones = vec![1.0; n];
    let scheme = match (spec.kind, spec.bias) {
        (EstimatorKind::Mc, _) => mc_scheme(n, cost, 1.0),
        (EstimatorKind::Mlmc, _) => mlmc_scheme(n, cost, &ones),
        (EstimatorKind::Re { order }, BiasTarget::FinestLevel) => {
            re_scheme_unit_bias(n, family.rates(), order, cost, &ones)
        }
        (EstimatorKind::Re { order }, BiasTarget::ReOrder(_)) => {
            re_scheme(n, family.rates(), order, cost, &ones)
        }
        (
            EstimatorKind::WeightedRe {
                variance_order,
                bias_order,
            },
            _,
        ) => weighted_re_scheme(n, family.rates(), variance_order, bias_order, cost, &ones),
        (EstimatorKind::Saob { .. }, _) => {
            return Err(AppError::config(
                "the allocation-optimal estimator has no fixed scheme",
            ))
        }
    };
    scheme.map_err(AppError::from)
}

/// How an allocation is sized: spend a budget, or invert the homogeneity
/// relation `Var(p) = Var(1)/p` to reach a variance of `eps²`.
#[derive(Clone, Copy, Debug)]
pub enum SizeSpec {
    Budget(f64),
    Accuracy(f64),
}

impl SizeSpec {
    fn from_run(cfg: &RunConfig) -> Result<Self, AppError> {
        match (cfg.run.budget, cfg.run.eps) {
            (Some(p), _) => {
                if !(p > 0.0) {
                    return Err(AppError::config("run.budget must be positive"));
                }
                Ok(SizeSpec::Budget(p))
            }
            (None, Some(eps)) => {
                if !(eps > 0.0) {
                    return Err(AppError::config("run.eps must be positive"));
                }
                Ok(SizeSpec::Accuracy(eps))
            }
            (None, None) => Err(AppError::config(
                "run.budget or run.eps is required for this command",
            )),
        }
    }
}

/// Budget-optimal allocation of one estimator: solver output for the
/// allocation-optimal kind, closed form for fixed coefficients.
fn allocate_for_spec<T: Real>(
    spec: &EstimatorSpec,
    family: &ExpansionFamily,
    cost: &CostModel,
    size: SizeSpec,
) -> Result<(mlblue::GroupSystem, Allocation, Vec<Vec<T>>, T, Vec<T>), AppError> {
    let md = family.moments::<T>();
    if let EstimatorKind::Saob { .. } = spec.kind {
        let coupling = spec.coupling(family.levels());
        let opts = SolverOptions::default();
        let sol: SaobSolution<T> = match size {
            SizeSpec::Budget(p) => saob_for_target(family, cost, coupling, spec.bias, p, &opts)?,
            SizeSpec::Accuracy(eps) => {
                let unit = saob_for_target::<T>(family, cost, coupling, spec.bias, 1.0, &opts)?;
                let target = eps * eps;
                let p = unit.variance.to_f64() / target;
                let mut scaled = unit;
                for mk in &mut scaled.allocation.m {
                    *mk *= p;
                }
                scaled.allocation.cost *= p;
                scaled.variance = scaled.variance / T::from_f64(p);
                scaled
            }
        };
        let system = enumerate_groups(family.levels(), coupling, cost)?;
        let alpha = mlblue::analysis::bias_vector::<T>(spec.bias, family.levels(), family)?;
        Ok((system, sol.allocation, sol.betas, sol.variance, alpha))
    } else {
        let scheme = build_fixed_scheme::<T>(spec, family, cost)?;
        let sigmas: Vec<T> = scheme
            .betas
            .iter()
            .map(|b| md.cov.quad_form(b, b))
            .collect();
        let costs: Vec<f64> = (0..scheme.system.len())
            .map(|k| scheme.system.cost(k))
            .collect();
        let budget = match size {
            SizeSpec::Budget(p) => p,
            SizeSpec::Accuracy(eps) => {
                let (_, j_unit) =
                    mlblue::allocation::closed_form_allocation(&sigmas, &costs, 1.0)?;
                (j_unit / T::from_f64(eps * eps)).to_f64()
            }
        };
        let (alloc, variance) =
            mlblue::allocation::closed_form_allocation(&sigmas, &costs, budget)?;
        Ok((
            scheme.system.clone(),
            alloc,
            scheme.betas.clone(),
            variance,
            scheme.alpha.clone(),
        ))
    }
}

pub fn cmd_allocate(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    with_precision!(cfg, allocate_impl(cfg, out))
}

fn allocate_impl<T: Real>(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    let family = cfg.family()?;
    let cost = cfg.cost_model()?;
    let size = SizeSpec::from_run(cfg)?;
    let policy = cfg.rounding()?;
    let md = family.moments::<T>();
    for spec in cfg.estimator_specs()? {
        let (system, alloc, _betas, variance, alpha) =
            allocate_for_spec::<T>(&spec, &family, &cost, size)?;
        let rounded = round_allocation(&alloc, &system, policy, 1e-8);
        let mut csv = CsvFile::new(&["group_id", "models", "m_continuous", "m_rounded", "W_k"]);
        for (k, group) in system.groups().iter().enumerate() {
            csv.row(&[
                (k + 1).to_string(),
                group.label(),
                num(alloc.m[k]),
                num(rounded.m[k]),
                num(system.cost(k)),
            ]);
        }
        let id = spec.id();
        csv.write(out, &format!("allocation_{id}.csv"))?;

        // Predicted variance when the rounded counts are used optimally.
        let variance_rounded = Allocation::new(rounded.m.clone(), &system)
            .ok()
            .and_then(|a| assemble_psi(&system, &md.cov, &a).ok())
            .and_then(|psi| blue_variance(&psi, &alpha).ok())
            .map_or(f64::NAN, |v| v.to_f64());
        let mut summary = CsvFile::new(&[
            "variance_continuous",
            "variance_rounded_predicted",
            "cost_continuous",
            "cost_rounded",
        ]);
        summary.row(&[
            num(variance.to_f64()),
            num(variance_rounded),
            num(alloc.cost),
            num(rounded.cost),
        ]);
        summary.write(out, &format!("allocation_summary_{id}.csv"))?;
    }
    Ok(())
}

pub fn cmd_schemes(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    with_precision!(cfg, schemes_impl(cfg, out))
}

fn schemes_impl<T: Real>(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    let family = cfg.family()?;
    let cost = cfg.cost_model()?;
    let n = family.levels();
    for spec in cfg.estimator_specs()? {
        let id = spec.id();
        let (system, betas) = if let EstimatorKind::Saob { .. } = spec.kind {
            let size = SizeSpec::from_run(cfg)?;
            let (system, _, betas, _, _) = allocate_for_spec::<T>(&spec, &family, &cost, size)?;
            (system, betas)
        } else {
            let scheme = build_fixed_scheme::<T>(&spec, &family, &cost)?;
            (scheme.system.clone(), scheme.betas)
        };
        let mut header = vec!["group_id".to_string(), "models".to_string()];
        for l in 1..=n {
            header.push(format!("beta_{l}"));
        }
        let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut csv = CsvFile::new(&header_refs);
        for (k, group) in system.groups().iter().enumerate() {
            let mut row = vec![(k + 1).to_string(), group.label()];
            for b in &betas[k] {
                row.push(num(b.to_f64()));
            }
            csv.row(&row);
        }
        csv.write(out, &format!("schemes_{id}.csv"))?;

        // Extrapolation kinds also export their coefficient vectors.
        let order = match spec.kind {
            EstimatorKind::Re { order } => Some(order),
            EstimatorKind::WeightedRe { variance_order, .. } => Some(variance_order),
            _ => None,
        };
        if let Some(order) = order {
            let coeffs = re_vectors::<T>(n, family.rates(), order)
                .map_err(AppError::from)?;
            let mut header = vec!["k".to_string(), "q".to_string()];
            for l in 1..=n {
                header.push(format!("v_{l}"));
            }
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            let mut csv = CsvFile::new(&header_refs);
            for k in 0..=n {
                let mut row = vec![k.to_string(), order.to_string()];
                for v in coeffs.vector(k) {
                    row.push(num(v.to_f64()));
                }
                csv.row(&row);
            }
            csv.write(out, &format!("vectors_{id}.csv"))?;
        }
    }
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    with_precision!(cfg, sweep_impl(cfg, out))
}

fn sweep_impl<T: Real>(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    let family = cfg.family()?;
    let cost = cfg.cost_model()?;
    let specs = cfg.estimator_specs()?;
    let policy = cfg.rounding()?;
    let opts = SolverOptions::default();
    let (records, fits) = match cfg.sweep_mode()? {
        SweepMode::Grid => {
            let grid = cfg
                .run
                .eps_grid
                .clone()
                .ok_or_else(|| AppError::config("run.eps_grid is required in grid mode"))?;
            cost_sweep::<T>(&family, &cost, &specs, &grid, policy, &opts)?
        }
        SweepMode::Levels => {
            let levels = cfg.run.levels_list.clone().unwrap_or_else(|| {
                (1..=family.levels()).collect()
            });
            let mut records = Vec::new();
            let mut fits = Vec::new();
            for spec in &specs {
                let mut these = Vec::new();
                for &level in &levels {
                    these.push(level_mse_driver::<T>(
                        &family, &cost, spec, level, policy, &opts,
                    )?);
                }
                let cont: Vec<(f64, f64)> = these
                    .iter()
                    .map(|r| (r.eps.log2(), r.cost_continuous.log2()))
                    .collect();
                let rnd: Vec<(f64, f64)> = these
                    .iter()
                    .map(|r| (r.eps.log2(), r.cost_rounded.log2()))
                    .collect();
                for (points, rounded) in [(cont, false), (rnd, true)] {
                    let fit = mlblue::analysis::fit_rate(&points)?;
                    fits.push(mlblue::analysis::SlopeFit {
                        estimator: spec.id(),
                        rounded,
                        slope: fit.slope,
                        stderr: fit.stderr_slope,
                    });
                }
                records.extend(these);
            }
            (records, fits)
        }
    };
    let mut csv = CsvFile::new(&[
        "estimator",
        "eps",
        "L",
        "cost_continuous",
        "cost_rounded",
        "variance",
        "bias_sq",
        "mse",
    ]);
    for r in &records {
        csv.row(&[
            r.estimator.clone(),
            num(r.eps),
            r.level.to_string(),
            num(r.cost_continuous),
            num(r.cost_rounded),
            num(r.variance),
            num(r.bias_sq),
            num(r.mse),
        ]);
    }
    csv.write(out, "sweep.csv")?;
    let mut csv = CsvFile::new(&["estimator", "slope", "stderr"]);
    for f in &fits {
        let id = if f.rounded {
            format!("{}+ceil", f.estimator)
        } else {
            f.estimator.clone()
        };
        csv.row(&[id, num(f.slope), num(f.stderr)]);
    }
    csv.write(out, "slopes.csv")
}

pub fn cmd_convergence(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    with_precision!(cfg, convergence_impl(cfg, out))
}

fn convergence_impl<T: Real>(cfg: &RunConfig, out: &Path) -> Result<(), AppError> {
    let family = cfg.family()?;
    let cost = cfg.cost_model()?;
    let budget = cfg.budget()?;
    let orders = cfg.run.couplings.clone().unwrap_or_else(|| vec![2, 3, 4]);
    let ell0s = cfg
        .run
        .ell0_values
        .clone()
        .unwrap_or_else(|| (0..=6).collect());
    let points = convergence_study::<T>(
        &family,
        &cost,
        &orders,
        &ell0s,
        budget,
        &SolverOptions::default(),
    )?;
    let mut csv = CsvFile::new(&["ell0", "q", "r_q", "e_q"]);
    for p in &points {
        csv.row(&[
            p.ell0.to_string(),
            p.order.to_string(),
            num(p.coeff_distance),
            num(p.variance_gap),
        ]);
    }
    csv.write(out, "convergence.csv")
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path, seed_override: Option<u64>) -> Result<(), AppError> {
    // Sampling is an f64 path; analytic values are computed at the
    // configured precision inside the core.
    let family = cfg.family()?;
    let cost = cfg.cost_model()?;
    let budget = cfg.budget()?;
    let replications = cfg.replications()?;
    let seed = seed_override.or(cfg.run.seed).unwrap_or(0);
    let md64 = family.moments::<f64>();
    let mut csv = CsvFile::new(&[
        "estimator",
        "R",
        "mean_emp",
        "var_emp",
        "var_analytic",
        "mse_emp",
        "mse_analytic",
        "z_score",
    ]);
    for spec in cfg.estimator_specs()? {
        let scheme = integer_scheme_for_spec(&spec, &family, &cost, budget, &md64)?;
        let run = run_estimator(&scheme, &family, seed, replications)?;
        let mse = mse_report(&scheme, &family, seed, replications)?;
        csv.row(&[
            spec.id(),
            replications.to_string(),
            num(run.empirical_mean),
            num(run.empirical_variance),
            num(run.analytic_variance),
            num(mse.empirical_mse),
            num(mse.analytic_mse),
            num(run.standardized_mean_error),
        ]);
    }
    csv.write(out, "simulate.csv")
}

/// Integer-count executable scheme for one estimator at the given budget:
/// optimal fractional counts, ceiled; the allocation-optimal estimator gets
/// its coefficients re-extracted at the rounded counts.
fn integer_scheme_for_spec(
    spec: &EstimatorSpec,
    family: &ExpansionFamily,
    cost: &CostModel,
    budget: f64,
    md: &mlblue::MomentData<f64>,
) -> Result<EstimatorScheme<f64>, AppError> {
    let (system, alloc, betas, _, alpha) =
        allocate_for_spec::<f64>(spec, family, cost, SizeSpec::Budget(budget))?;
    let rounded = round_allocation(&alloc, &system, RoundingPolicy::Ceil, 1e-8);
    if let EstimatorKind::Saob { .. } = spec.kind {
        let ra = Allocation::new(rounded.m.clone(), &system)?;
        let betas = extract_beta(&system, &md.cov, &ra, &alpha)?;
        Ok(EstimatorScheme::new(system, betas, rounded.m, alpha)?)
    } else {
        // Fixed coefficients need at least one sample wherever β is nonzero.
        let m: Vec<f64> = rounded
            .m
            .iter()
            .zip(&betas)
            .map(|(&mk, beta)| {
                if beta.iter().any(|&b| b != 0.0) {
                    mk.max(1.0)
                } else {
                    mk
                }
            })
            .collect();
        Ok(EstimatorScheme::new(system, betas, m, alpha)?)
    }
}

/// Sanity helper shared by tests: analytic variance of an executable scheme.
#[allow(dead_code)]
fn scheme_variance_f64(
    scheme: &EstimatorScheme<f64>,
    cov: &Matrix<f64>,
) -> Result<f64, AppError> {
    scheme_variance(scheme, cov).map_err(AppError::from)
}
