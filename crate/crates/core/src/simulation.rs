//! Empirical execution of estimator schemes on sampled coupled paths.
//!
//! One replication draws `m_k` independent events per group; within an
//! event every model of the group is evaluated on the same latent draw.
//! Events are addressed by `(seed, replication, group, event)` through the
//! counter-keyed streams in [`crate::rng`], so results are identical for
//! any worker count, and any single event can be recomputed in isolation.

use rayon::prelude::*;

use crate::blue::{check_unbiased, scheme_variance, EstimatorScheme};
use crate::error::{Error, Result};
use crate::family::ExpansionFamily;

use crate::rng::{event_rng, CTX_ESTIMATOR};

/// Empirical mean/variance of a scheme against its analytic values.
#[derive(Clone, Debug)]
pub struct SimulationReport {
    pub replications: usize,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub analytic_variance: f64,
    /// Analytic estimand `αᵀμ`.
    pub target: f64,
    /// `(mean − αᵀμ) / (analytic sd / √R)`.
    pub standardized_mean_error: f64,
    /// `empirical / analytic` variance.
    pub variance_ratio: f64,
}

/// Empirical MSE against the analytic bias/variance decomposition.
#[derive(Clone, Debug)]
pub struct MseReport {
    pub replications: usize,
    pub empirical_mse: f64,
    pub analytic_mse: f64,
    pub analytic_bias: f64,
    pub analytic_variance: f64,
    /// `(mse_emp − mse_analytic) / se(mse_emp)`.
    pub standardized_error: f64,
}

/// Kahan-compensated accumulator; used so reductions are identical in any
/// chunking of the replication range.
#[derive(Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

fn integral_counts(scheme: &EstimatorScheme<f64>) -> Result<Vec<u64>> {
    scheme
        .m
        .iter()
        .enumerate()
        .map(|(k, &mk)| {
            if !(mk >= 0.0) || (mk - mk.round()).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "simulation: group {} has non-integer sample count {mk}",
                    scheme.system.group(k)
                )));
            }
            Ok(mk.round() as u64)
        })
        .collect()
}

/// One replication of the scheme estimate.
fn replicate(
    scheme: &EstimatorScheme<f64>,
    counts: &[u64],
    family: &ExpansionFamily,
    seed: u64,
    replication: u64,
) -> f64 {
    let mut total = Compensated::default();
    for (k, group) in scheme.system.groups().iter().enumerate() {
        if counts[k] == 0 {
            continue;
        }
        let beta = &scheme.betas[k];
        let mut group_sum = Compensated::default();
        for event in 0..counts[k] {
            let mut rng = event_rng(seed, CTX_ESTIMATOR, replication, k as u64, event);
            let (_, values) = family.draw_group(&mut rng, group.levels());
            let mut combo = 0.0;
            for (a, &level) in group.levels().iter().enumerate() {
                combo += beta[level - 1] * values[a];
            }
            group_sum.add(combo);
        }
        total.add(group_sum.value() / counts[k] as f64);
    }
    total.value()
}

fn replicate_all(
    scheme: &EstimatorScheme<f64>,
    family: &ExpansionFamily,
    seed: u64,
    replications: usize,
) -> Result<Vec<f64>> {
    if replications < 2 {
        return Err(Error::invalid("simulation: need at least two replications"));
    }
    let report = check_unbiased(scheme, 1e-8);
    if !report.pass() {
        return Err(Error::invalid(format!("simulation: {report}")));
    }
    let counts = integral_counts(scheme)?;
    Ok((0..replications)
        .into_par_iter()
        .map(|r| replicate(scheme, &counts, family, seed, r as u64))
        .collect())
}

/// Run the scheme `R` times and compare against the analytic moments.
pub fn run_estimator(
    scheme: &EstimatorScheme<f64>,
    family: &ExpansionFamily,
    seed: u64,
    replications: usize,
) -> Result<SimulationReport> {
    let estimates = replicate_all(scheme, family, seed, replications)?;
    let md = family.moments::<f64>();
    let target: f64 = scheme
        .alpha
        .iter()
        .zip(&md.mu)
        .map(|(a, m)| a * m)
        .sum();
    let analytic_variance = scheme_variance(scheme, &md.cov)?;
    let r = replications as f64;
    let mut acc = Compensated::default();
    for &e in &estimates {
        acc.add(e);
    }
    let mean = acc.value() / r;
    let mut sq = Compensated::default();
    for &e in &estimates {
        sq.add((e - mean) * (e - mean));
    }
    let variance = sq.value() / (r - 1.0);
    let se = (analytic_variance / r).sqrt();
    Ok(SimulationReport {
        replications,
        empirical_mean: mean,
        empirical_variance: variance,
        analytic_variance,
        target,
        standardized_mean_error: if se > 0.0 { (mean - target) / se } else { 0.0 },
        variance_ratio: if analytic_variance > 0.0 {
            variance / analytic_variance
        } else {
            f64::NAN
        },
    })
}

/// Empirical mean-square error against `bias² + variance`.
pub fn mse_report(
    scheme: &EstimatorScheme<f64>,
    family: &ExpansionFamily,
    seed: u64,
    replications: usize,
) -> Result<MseReport> {
    let estimates = replicate_all(scheme, family, seed, replications)?;
    let md = family.moments::<f64>();
    let target: f64 = scheme
        .alpha
        .iter()
        .zip(&md.mu)
        .map(|(a, m)| a * m)
        .sum();
    let bias = (target - md.truth_mean).abs();
    let analytic_variance = scheme_variance(scheme, &md.cov)?;
    let analytic_mse = bias * bias + analytic_variance;
    let r = replications as f64;
    let mut acc = Compensated::default();
    for &e in &estimates {
        let d = e - md.truth_mean;
        acc.add(d * d);
    }
    let mse = acc.value() / r;
    // Standard error of the squared-error mean, from its sample variance.
    let mut sq = Compensated::default();
    for &e in &estimates {
        let d = e - md.truth_mean;
        sq.add((d * d - mse) * (d * d - mse));
    }
    let se = (sq.value() / (r - 1.0) / r).sqrt();
    Ok(MseReport {
        replications,
        empirical_mse: mse,
        analytic_mse,
        analytic_bias: bias,
        analytic_variance,
        standardized_error: if se > 0.0 { (mse - analytic_mse) / se } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extrapolation::{mc_scheme, mlmc_scheme, re_scheme_unit_bias};
    use crate::family::ExpansionFamily;
    use crate::groups::ModelGroup;

    #[test]
    fn mc_mean_within_clt_band() {
        let (family, cost) = ExpansionFamily::toy_exp(0);
        let scheme = mc_scheme::<f64>(4, &cost, 8.0).unwrap();
        let report = run_estimator(&scheme, &family, 11, 20_000).unwrap();
        assert!(
            report.standardized_mean_error.abs() < 4.0,
            "z = {}",
            report.standardized_mean_error
        );
        assert!(
            (report.variance_ratio - 1.0).abs() < 0.08,
            "ratio {}",
            report.variance_ratio
        );
    }

    #[test]
    fn mlmc_variance_ratio_close_to_one() {
        let (family, cost) = ExpansionFamily::toy_exp(0);
        let scheme = mlmc_scheme::<f64>(4, &cost, &[64.0, 16.0, 4.0, 2.0]).unwrap();
        let report = run_estimator(&scheme, &family, 5, 20_000).unwrap();
        assert!(report.standardized_mean_error.abs() < 4.0);
        assert!(
            (report.variance_ratio - 1.0).abs() < 0.08,
            "ratio {}",
            report.variance_ratio
        );
    }

    #[test]
    fn quadrupling_counts_quarters_variance() {
        let (family, cost) = ExpansionFamily::toy_exp(0);
        let a = mlmc_scheme::<f64>(4, &cost, &[16.0, 8.0, 4.0, 2.0]).unwrap();
        let b = mlmc_scheme::<f64>(4, &cost, &[64.0, 32.0, 16.0, 8.0]).unwrap();
        let ra = run_estimator(&a, &family, 3, 20_000).unwrap();
        let rb = run_estimator(&b, &family, 4, 20_000).unwrap();
        let ratio = rb.empirical_variance / ra.empirical_variance;
        assert!((ratio - 0.25).abs() < 0.035, "ratio {ratio}");
    }

    #[test]
    fn results_independent_of_worker_count() {
        let (family, cost) = ExpansionFamily::toy_exp(0);
        let scheme = mlmc_scheme::<f64>(4, &cost, &[8.0, 4.0, 2.0, 1.0]).unwrap();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let r1 = pool1.install(|| run_estimator(&scheme, &family, 99, 5_000).unwrap());
        let r4 = pool4.install(|| run_estimator(&scheme, &family, 99, 5_000).unwrap());
        assert_eq!(r1.empirical_mean.to_bits(), r4.empirical_mean.to_bits());
        assert_eq!(
            r1.empirical_variance.to_bits(),
            r4.empirical_variance.to_bits()
        );
    }

    #[test]
    fn within_event_coupling_matches_covariance() {
        // Covariance of (Z_2, Z_3) inside shared events converges to the
        // analytic cross-covariance.
        let (family, _) = ExpansionFamily::toy_exp(0);
        let md = family.moments::<f64>();
        let group = ModelGroup::new(vec![2, 3]).unwrap();
        let n = 200_000usize;
        let mut sums = [0.0f64; 2];
        let mut prods = 0.0f64;
        for i in 0..n {
            let mut rng = crate::rng::event_rng(17, crate::rng::CTX_ESTIMATOR, 0, 0, i as u64);
            let (_, v) = family.draw_group(&mut rng, group.levels());
            sums[0] += v[0];
            sums[1] += v[1];
            prods += v[0] * v[1];
        }
        let mean = [sums[0] / n as f64, sums[1] / n as f64];
        let emp = prods / n as f64 - mean[0] * mean[1];
        let expect = md.cov[(1, 2)];
        let se = ((md.cov[(1, 1)] * md.cov[(2, 2)] + expect * expect) / n as f64).sqrt();
        assert!(
            (emp - expect).abs() < 5.0 * se,
            "emp {emp} vs {expect} (se {se})"
        );
    }

    #[test]
    fn cross_group_independence() {
        // Terms from different groups of the same replication use disjoint
        // events; their empirical cross-covariance is statistically zero.
        let (family, _) = ExpansionFamily::toy_exp(0);
        let n = 100_000usize;
        let mut sa = 0.0;
        let mut sb = 0.0;
        let mut sab = 0.0;
        for r in 0..n {
            let mut rng_a = crate::rng::event_rng(23, crate::rng::CTX_ESTIMATOR, r as u64, 0, 0);
            let mut rng_b = crate::rng::event_rng(23, crate::rng::CTX_ESTIMATOR, r as u64, 1, 0);
            let (_, va) = family.draw_group(&mut rng_a, &[1]);
            let (_, vb) = family.draw_group(&mut rng_b, &[1, 2]);
            let a = va[0];
            let b = vb[1] - vb[0];
            sa += a;
            sb += b;
            sab += a * b;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let md = family.moments::<f64>();
        let var_a = md.cov[(0, 0)];
        let var_b = md.cov[(0, 0)] + md.cov[(1, 1)] - 2.0 * md.cov[(0, 1)];
        let se = (var_a * var_b / nf).sqrt();
        assert!(cov.abs() < 4.0 * se, "cov {cov} (se {se})");
    }

    #[test]
    fn mse_decomposition_for_biased_family() {
        let (family, cost) = ExpansionFamily::toy_exp_with(4, 0, vec![0.0, 1.0, 0.5, 0.25]);
        let scheme = re_scheme_unit_bias::<f64>(4, family.rates(), 3, &cost, &[32.0, 16.0, 8.0, 4.0])
            .unwrap();
        let report = mse_report(&scheme, &family, 31, 40_000).unwrap();
        assert!(
            report.standardized_error.abs() < 4.0,
            "z = {}",
            report.standardized_error
        );
        // The analytic bias here matches the coefficient-vector bias.
        let md = family.moments::<f64>();
        let direct = crate::extrapolation::re_bias(&scheme.alpha, &md);
        assert!((report.analytic_bias - direct).abs() < 1e-14);
    }

    #[test]
    fn mean_zero_family_mse_equals_variance() {
        let (family, cost) = ExpansionFamily::toy_exp(0);
        let scheme = mc_scheme::<f64>(4, &cost, 16.0).unwrap();
        let report = mse_report(&scheme, &family, 7, 20_000).unwrap();
        assert_eq!(report.analytic_bias, 0.0);
        assert!((report.analytic_mse - report.analytic_variance).abs() < 1e-16);
    }

    #[test]
    fn non_integer_counts_rejected() {
        let (family, cost) = ExpansionFamily::toy_exp(0);
        let scheme = mc_scheme::<f64>(4, &cost, 2.5).unwrap();
        assert!(run_estimator(&scheme, &family, 1, 100).is_err());
    }

    #[test]
    fn zero_replications_rejected() {
        let (family, cost) = ExpansionFamily::toy_exp(0);
        let scheme = mc_scheme::<f64>(4, &cost, 2.0).unwrap();
        assert!(run_estimator(&scheme, &family, 1, 0).is_err());
        assert!(run_estimator(&scheme, &family, 1, 1).is_err());
    }
}
