//! Cross-module consistency checks: the allocation optimum against every
//! constructed scheme, coupling monotonicity, statistical unbiasedness of
//! the normal-equation estimator, and rounding-cost behavior.

use mlblue::allocation::{
    closed_form_allocation, round_allocation, RoundingPolicy, SolverOptions,
};
use mlblue::analysis::{
    mse_target_driver, saob_for_target, BiasTarget, EstimatorKind, EstimatorSpec,
};
use mlblue::blue::{blue_point_estimate, scheme_variance, EstimatorScheme};
use mlblue::extrapolation::{
    mc_scheme, mlmc_scheme, re_scheme, re_scheme_unit_bias, weighted_re_scheme,
};
use mlblue::family::{CostModel, ExpansionFamily, RateVector};
use mlblue::groups::ModelGroup;
use mlblue::num::Real;
use mlblue::{GroupSystem, Matrix, DD};

/// Optimal-allocation variance of a fixed scheme at the given budget.
fn scheme_optimal_variance(scheme: &EstimatorScheme<DD>, cov: &Matrix<DD>, budget: f64) -> f64 {
    let sigmas: Vec<DD> = scheme
        .betas
        .iter()
        .map(|b| cov.quad_form(b, b))
        .collect();
    let costs: Vec<f64> = (0..scheme.system.len())
        .map(|k| scheme.system.cost(k))
        .collect();
    let (_, objective) = closed_form_allocation(&sigmas, &costs, budget).unwrap();
    objective.to_f64()
}

#[test]
fn allocation_optimum_dominates_every_constructed_scheme() {
    let budget = 100.0;
    let (family, cost) = ExpansionFamily::toy_exp(0);
    let n = family.levels();
    let md = family.moments::<DD>();
    let ones = vec![1.0; n];
    let opts = SolverOptions::default();

    // Estimators of the finest-level mean.
    let unit_targets: Vec<(String, EstimatorScheme<DD>, usize)> = vec![
        ("mc".into(), mc_scheme(n, &cost, 1.0).unwrap(), 1),
        ("mlmc".into(), mlmc_scheme(n, &cost, &ones).unwrap(), 2),
        (
            "re3@e".into(),
            re_scheme_unit_bias(n, family.rates(), 3, &cost, &ones).unwrap(),
            3,
        ),
        (
            "re4@e".into(),
            re_scheme_unit_bias(n, family.rates(), 4, &cost, &ones).unwrap(),
            4,
        ),
    ];
    for (name, scheme, coupling) in unit_targets {
        let reference = scheme_optimal_variance(&scheme, &md.cov, budget);
        let sol = saob_for_target::<DD>(
            &family,
            &cost,
            coupling,
            BiasTarget::FinestLevel,
            budget,
            &opts,
        )
        .unwrap();
        assert!(
            sol.variance.to_f64() <= reference + 1e-8,
            "{name}: optimum {} vs scheme {reference}",
            sol.variance.to_f64()
        );
    }

    // Estimators of the order-3 extrapolated mean.
    let v3_targets: Vec<(String, EstimatorScheme<DD>, usize)> = vec![
        (
            "re3".into(),
            re_scheme(n, family.rates(), 3, &cost, &ones).unwrap(),
            3,
        ),
        (
            "wre2_3".into(),
            weighted_re_scheme(n, family.rates(), 2, 3, &cost, &ones).unwrap(),
            2,
        ),
    ];
    for (name, scheme, coupling) in v3_targets {
        let reference = scheme_optimal_variance(&scheme, &md.cov, budget);
        let sol = saob_for_target::<DD>(
            &family,
            &cost,
            coupling,
            BiasTarget::ReOrder(3),
            budget,
            &opts,
        )
        .unwrap();
        assert!(
            sol.variance.to_f64() <= reference + 1e-8,
            "{name}: optimum {} vs scheme {reference}",
            sol.variance.to_f64()
        );
    }
}

#[test]
fn variance_is_nonincreasing_in_coupling() {
    let budget = 100.0;
    let (family, cost) = ExpansionFamily::toy_exp(0);
    let opts = SolverOptions::default();
    let mut previous = f64::INFINITY;
    for coupling in 1..=4usize {
        let sol = saob_for_target::<DD>(
            &family,
            &cost,
            coupling,
            BiasTarget::FinestLevel,
            budget,
            &opts,
        )
        .unwrap();
        let var = sol.variance.to_f64();
        assert!(
            var <= previous * (1.0 + 1e-10),
            "coupling {coupling}: variance {var} above {previous}"
        );
        previous = var;
        if coupling == 1 {
            // Coupling one is plain Monte Carlo on the finest level.
            let md = family.moments::<f64>();
            let w = cost.level_cost(family.levels()).unwrap();
            let expect = md.cov[(3, 3)] * w / budget;
            assert!((var - expect).abs() < 1e-9 * expect, "{var} vs {expect}");
        }
    }
}

#[test]
fn noise_free_family_converges_even_faster() {
    // Degenerate latent noise: the expansion is exact, and the telescope
    // and optimal coefficients coincide quickly as the base accuracy grows.
    let rates = RateVector::new(vec![0.0, 1.0, 2.0, 3.0], 2.0).unwrap();
    let mut q_cov = Matrix::<f64>::zeros(4, 4);
    for i in 0..4 {
        for j in 0..4 {
            q_cov[(i, j)] = (-((i as f64) - (j as f64)).abs()).exp();
        }
    }
    let family =
        ExpansionFamily::new_degenerate(4, rates, vec![0.0; 4], q_cov, 0.0, 1.0, 0).unwrap();
    let cost = CostModel::geometric(0.25, 2.0).unwrap();
    let opts = SolverOptions::default();
    for order in [2usize, 3] {
        let r0 = mlblue::analysis::coefficient_distance::<DD>(
            &family, &cost, order, 100.0, &opts,
        )
        .unwrap();
        let r6 = mlblue::analysis::coefficient_distance::<DD>(
            &family.with_ell0(6),
            &cost,
            order,
            100.0,
            &opts,
        )
        .unwrap();
        let e6 =
            mlblue::analysis::variance_gap::<DD>(&family.with_ell0(6), &cost, order, 100.0, &opts)
                .unwrap();
        assert!(r6 < 0.1 * r0, "order {order}: {r6} vs {r0}");
        assert!((-1e-8..0.2).contains(&e6), "order {order}: gap {e6}");
    }
}

#[test]
fn blue_point_estimate_is_statistically_unbiased() {
    // 20k replications of a small two-group design; the empirical mean of
    // the normal-equation estimate stays within the CLT band of αᵀμ.
    let (toy, cost) = ExpansionFamily::toy_exp(0);
    let family = toy.truncated(2).unwrap();
    let md = family.moments::<f64>();
    let g1 = ModelGroup::new(vec![1, 2]).unwrap();
    let g2 = ModelGroup::new(vec![2]).unwrap();
    let sys = GroupSystem::from_groups(vec![g1.clone(), g2.clone()], &cost, 2).unwrap();
    let alpha = vec![0.25, 0.75];
    let m = [3usize, 2usize];

    // Analytic variance of the BLUE for this design.
    let alloc = mlblue::Allocation::new(vec![3.0, 2.0], &sys).unwrap();
    let psi = mlblue::blue::assemble_psi(&sys, &md.cov, &alloc).unwrap();
    let var = mlblue::blue::blue_variance(&psi, &alpha).unwrap();

    let replications = 20_000usize;
    let mut mean = 0.0;
    for rep in 0..replications {
        // One full-path record per event; restricting a record to the
        // group's levels keeps the within-event coupling.
        let records = family
            .sample_paths(90_000 + rep as u64, m[0] + m[1])
            .unwrap();
        let mut record_iter = records.into_iter();
        let mut samples: Vec<Vec<Vec<f64>>> = Vec::new();
        for (k, group) in [g1.clone(), g2.clone()].into_iter().enumerate() {
            let mut events = Vec::new();
            for _ in 0..m[k] {
                let record = record_iter.next().unwrap();
                events.push(
                    group
                        .levels()
                        .iter()
                        .map(|&l| record.levels[l - 1])
                        .collect(),
                );
            }
            samples.push(events);
        }
        let est = blue_point_estimate(&sys, &md.cov, &samples, &alpha).unwrap();
        mean += est;
    }
    mean /= replications as f64;
    let target: f64 = alpha.iter().zip(&md.mu).map(|(a, m)| a * m).sum();
    let band = 4.0 * (var / replications as f64).sqrt();
    assert!(
        (mean - target).abs() < band,
        "mean {mean} outside ±{band} of {target}"
    );
}

#[test]
fn ceiling_inflates_cost_at_steep_cost_growth() {
    // At a steep cost rate the continuous optimum takes far less than one
    // sample of the finest groups, so ceiling dominates the total cost.
    let rates = RateVector::new(vec![0.0, 2.0, 4.0], 6.0).unwrap();
    let mut q_cov = Matrix::<f64>::zeros(3, 3);
    for i in 0..3 {
        q_cov[(i, i)] = 0.01;
    }
    let family =
        ExpansionFamily::new(6, rates, vec![0.0, 1.0, 0.0], q_cov, 0.01, 4.0, 0).unwrap();
    let cost = CostModel::geometric(1e-6, 6.0).unwrap();
    let spec = EstimatorSpec {
        kind: EstimatorKind::Saob { coupling: Some(3) },
        bias: BiasTarget::FinestLevel,
    };
    let rec = mse_target_driver::<DD>(
        &family,
        &cost,
        &spec,
        0.002,
        RoundingPolicy::Ceil,
        &SolverOptions::default(),
    )
    .unwrap();
    assert!(
        rec.cost_rounded / rec.cost_continuous > 1.0,
        "rounded {} vs continuous {}",
        rec.cost_rounded,
        rec.cost_continuous
    );
    assert!((rec.mse - rec.bias_sq - rec.variance).abs() <= 1e-18);
}

#[test]
fn rounding_keeps_explicit_allocations_unchanged() {
    let cost = CostModel::table(vec![1.0, 4.0]).unwrap();
    let sys = mlblue::groups::enumerate_groups(2, 2, &cost).unwrap();
    let alloc = mlblue::Allocation::new(vec![2.0, 3.0, 1.0], &sys).unwrap();
    let same = round_allocation(&alloc, &sys, RoundingPolicy::None, 1e-8);
    assert_eq!(same.m, alloc.m);
    assert_eq!(same.cost, alloc.cost);
}

#[test]
fn scheme_variance_matches_simulated_variance_for_weighted_scheme() {
    let (family, cost) = ExpansionFamily::toy_exp(0);
    let scheme =
        weighted_re_scheme::<f64>(4, family.rates(), 2, 3, &cost, &[32.0, 16.0, 8.0, 4.0])
            .unwrap();
    let md = family.moments::<f64>();
    let analytic = scheme_variance(&scheme, &md.cov).unwrap();
    let report = mlblue::simulation::run_estimator(&scheme, &family, 314, 40_000).unwrap();
    assert!(
        (report.empirical_variance / analytic - 1.0).abs() < 0.05,
        "empirical {} vs analytic {analytic}",
        report.empirical_variance
    );
}
