//! Parametric model families with a pathwise geometric error expansion.
//!
//! A family describes approximations `Z_1, ..., Z_L` of a scalar random
//! variable `Z` of the form
//!
//! ```text
//! Z_ℓ(ω) = Z(ω) + Σ_{j=2..q} c_j(ω) 2^{-(ℓ+ℓ0) γ^j}
//!                + noise_scale · ξ_ℓ(ω) · 2^{-(ℓ+ℓ0) · noise_rate},
//! ```
//!
//! where `(Z, c_2, ..., c_q)` is jointly Gaussian with mean `mean` and
//! covariance `Q`, and the `ξ_ℓ` are independent standard Gaussians. Means
//! and covariances of the `Z_ℓ` are available in closed form, which is what
//! every analytic computation in this crate runs on; sampling is only used
//! by the simulation layer to validate those formulas empirically.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::num::Real;
use crate::rng::{event_rng, CTX_PATHS};

/// Expansion rates `0 = γ^1 < γ^2 < ... < γ^q` plus the cost growth rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RateVector {
    gammas: Vec<f64>,
    gamma_cost: f64,
}

impl RateVector {
    pub fn new(gammas: Vec<f64>, gamma_cost: f64) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::invalid("rates: at least one exponent required"));
        }
        if gammas[0] != 0.0 {
            return Err(Error::invalid(format!(
                "rates: first exponent must be 0, got {}",
                gammas[0]
            )));
        }
        for w in gammas.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "rates: exponents must increase strictly ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if !(gamma_cost > 0.0) {
            return Err(Error::invalid("rates: cost exponent must be positive"));
        }
        Ok(RateVector { gammas, gamma_cost })
    }

    /// Number of expansion terms (including the leading exact one).
    pub fn order(&self) -> usize {
        self.gammas.len()
    }

    /// 1-based accessor: `gamma(1) = 0`.
    pub fn gamma(&self, j: usize) -> f64 {
        self.gammas[j - 1]
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn gamma_cost(&self) -> f64 {
        self.gamma_cost
    }
}

/// Per-level evaluation cost.
#[derive(Clone, Debug, PartialEq)]
pub enum CostModel {
    /// `w_ℓ = base · 2^{ℓ γ}` for levels `ℓ = 1..L`.
    Geometric { base: f64, rate: f64 },
    /// Explicit per-level table.
    Table(Vec<f64>),
}

impl CostModel {
    pub fn geometric(base: f64, rate: f64) -> Result<Self> {
        if !(base > 0.0) || !(rate > 0.0) {
            return Err(Error::invalid("cost model: base and rate must be positive"));
        }
        Ok(CostModel::Geometric { base, rate })
    }

    pub fn table(costs: Vec<f64>) -> Result<Self> {
        if costs.is_empty() || costs.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid(
                "cost model: table entries must be positive and nonempty",
            ));
        }
        Ok(CostModel::Table(costs))
    }

    /// Cost of one evaluation at level `ℓ` (1-based).
    pub fn level_cost(&self, level: usize) -> Result<f64> {
        if level == 0 {
            return Err(Error::invalid("level index is 1-based"));
        }
        match self {
            CostModel::Geometric { base, rate } => Ok(base * (level as f64 * rate).exp2()),
            CostModel::Table(t) => t.get(level - 1).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "level {level} outside cost table of length {}",
                    t.len()
                ))
            }),
        }
    }
}

/// Mean vector, model covariance and the truth mean of a family.
#[derive(Clone, Debug)]
pub struct MomentData<T> {
    pub mu: Vec<T>,
    pub cov: Matrix<T>,
    pub truth_mean: T,
}

/// One coupled sample of the whole family: the truth draw and every level
/// evaluated on the same latent event.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub truth: f64,
    pub levels: Vec<f64>,
}

/// Analytic model family satisfying the pathwise expansion.
#[derive(Clone, Debug)]
pub struct ExpansionFamily {
    levels: usize,
    rates: RateVector,
    mean: Vec<f64>,
    latent_cov: Matrix<f64>,
    latent_factor: Matrix<f64>,
    noise_scale: f64,
    noise_rate: f64,
    ell0: usize,
}

impl ExpansionFamily {
    /// Construct and validate a family. `mean` and `latent_cov` describe the
    /// joint law of `(Z, c_2, ..., c_q)`; `latent_cov` must be SPD.
    pub fn new(
        levels: usize,
        rates: RateVector,
        mean: Vec<f64>,
        latent_cov: Matrix<f64>,
        noise_scale: f64,
        noise_rate: f64,
        ell0: usize,
    ) -> Result<Self> {
        Self::validate_shape(levels, rates.order(), &mean, &latent_cov, noise_scale, noise_rate)?;
        let latent_factor = spd_factor(&latent_cov, false)?;
        Ok(ExpansionFamily {
            levels,
            rates,
            mean,
            latent_cov,
            latent_factor,
            noise_scale,
            noise_rate,
            ell0,
        })
    }

    /// Degenerate construction that admits a positive *semi*definite latent
    /// covariance (including all zeros). Only meaningful for deterministic
    /// checks; the regular constructor rejects these.
    pub fn new_degenerate(
        levels: usize,
        rates: RateVector,
        mean: Vec<f64>,
        latent_cov: Matrix<f64>,
        noise_scale: f64,
        noise_rate: f64,
        ell0: usize,
    ) -> Result<Self> {
        Self::validate_shape(levels, rates.order(), &mean, &latent_cov, noise_scale, noise_rate)?;
        let latent_factor = spd_factor(&latent_cov, true)?;
        Ok(ExpansionFamily {
            levels,
            rates,
            mean,
            latent_cov,
            latent_factor,
            noise_scale,
            noise_rate,
            ell0,
        })
    }

    fn validate_shape(
        levels: usize,
        order: usize,
        mean: &[f64],
        latent_cov: &Matrix<f64>,
        noise_scale: f64,
        noise_rate: f64,
    ) -> Result<()> {
        if levels == 0 {
            return Err(Error::invalid("family: at least one level required"));
        }
        if mean.len() != order {
            return Err(Error::invalid(format!(
                "family: mean has length {}, expected the expansion order {order}",
                mean.len()
            )));
        }
        if latent_cov.rows() != order || latent_cov.cols() != order {
            return Err(Error::invalid(format!(
                "family: latent covariance is {}x{}, expected {order}x{order}",
                latent_cov.rows(),
                latent_cov.cols()
            )));
        }
        if latent_cov.max_abs_asymmetry() > 0.0 {
            return Err(Error::invalid("family: latent covariance must be symmetric"));
        }
        if !(noise_scale >= 0.0) {
            return Err(Error::invalid("family: noise scale must be nonnegative"));
        }
        if noise_scale > 0.0 && !(noise_rate > 0.0) {
            return Err(Error::invalid("family: noise rate must be positive"));
        }
        Ok(())
    }

    /// The toy four-level family with `Q_ij = exp(-|i-j|)`, rates (0,1,2,3),
    /// noise `0.1 · ξ_ℓ · 2^{-3(ℓ+ℓ0)}`, zero mean and costs `4^{ℓ-1}`.
    pub fn toy_exp(ell0: usize) -> (Self, CostModel) {
        Self::toy_exp_with(4, ell0, vec![0.0; 4])
    }

    /// Toy family variant with a caller-chosen level count and latent mean,
    /// used to exercise bias rates (the plain toy family is mean zero).
    pub fn toy_exp_with(levels: usize, ell0: usize, mean: Vec<f64>) -> (Self, CostModel) {
        let q = 4;
        let mut cov = Matrix::<f64>::zeros(q, q);
        for i in 0..q {
            for j in 0..q {
                cov[(i, j)] = (-((i as f64) - (j as f64)).abs()).exp();
            }
        }
        let rates = RateVector::new(vec![0.0, 1.0, 2.0, 3.0], 2.0).expect("static rates");
        let family =
            Self::new(levels, rates, mean, cov, 0.1, 3.0, ell0).expect("toy family is valid");
        let cost = CostModel::geometric(0.25, 2.0).expect("static cost");
        (family, cost)
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn rates(&self) -> &RateVector {
        &self.rates
    }

    pub fn ell0(&self) -> usize {
        self.ell0
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    pub fn latent_mean(&self) -> &[f64] {
        &self.mean
    }

    /// Same family with the base-accuracy shift replaced.
    pub fn with_ell0(&self, ell0: usize) -> Self {
        let mut f = self.clone();
        f.ell0 = ell0;
        f
    }

    /// Same family truncated to the first `levels` levels.
    pub fn truncated(&self, levels: usize) -> Result<Self> {
        if levels == 0 || levels > self.levels {
            return Err(Error::invalid(format!(
                "truncation to {levels} levels outside 1..={}",
                self.levels
            )));
        }
        let mut f = self.clone();
        f.levels = levels;
        Ok(f)
    }

    /// Weight of latent component `j` (1-based) at level `ℓ` (1-based):
    /// `2^{-(ℓ+ℓ0) γ^j}`; the leading component has weight 1.
    fn weight<T: Real>(&self, level: usize, j: usize) -> T {
        let g = self.rates.gamma(j);
        if g == 0.0 {
            T::one()
        } else {
            T::pow2(-g * (level + self.ell0) as f64)
        }
    }

    fn noise_sd(&self, level: usize) -> f64 {
        self.noise_scale * (-(self.noise_rate) * (level + self.ell0) as f64).exp2()
    }

    /// Closed-form mean vector, covariance and truth mean:
    /// `Cov(Z_i, Z_j) = w_iᵀ Q w_j + δ_ij noise_scale² 2^{-2(i+ℓ0) noise_rate}`
    /// with `w_ℓ = (1, 2^{-(ℓ+ℓ0)γ^2}, ..., 2^{-(ℓ+ℓ0)γ^q})`, `μ = W mean`.
    pub fn moments<T: Real>(&self) -> MomentData<T> {
        let n = self.levels;
        let q = self.rates.order();
        let mut w = vec![vec![T::zero(); q]; n];
        for (idx, row) in w.iter_mut().enumerate() {
            for (jdx, entry) in row.iter_mut().enumerate() {
                *entry = self.weight::<T>(idx + 1, jdx + 1);
            }
        }
        let mut mu = vec![T::zero(); n];
        for i in 0..n {
            let mut acc = T::zero();
            for j in 0..q {
                acc += T::from_f64(self.mean[j]) * w[i][j];
            }
            mu[i] = acc;
        }
        let mut cov = Matrix::<T>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = T::zero();
                for a in 0..q {
                    let mut row = T::zero();
                    for b in 0..q {
                        row += T::from_f64(self.latent_cov[(a, b)]) * w[j][b];
                    }
                    acc += w[i][a] * row;
                }
                if i == j {
                    let sd = self.noise_sd(i + 1);
                    acc += T::from_f64(sd) * T::from_f64(sd);
                }
                cov[(i, j)] = acc;
                cov[(j, i)] = acc;
            }
        }
        MomentData {
            mu,
            cov,
            truth_mean: T::from_f64(self.mean[0]),
        }
    }

    /// Draw `n` independent coupled path records, deterministic in `seed`.
    pub fn sample_paths(&self, seed: u64, n: usize) -> Result<Vec<PathRecord>> {
        if n == 0 {
            return Err(Error::invalid("sample_paths: need at least one record"));
        }
        let all_levels: Vec<usize> = (1..=self.levels).collect();
        Ok((0..n)
            .map(|i| {
                let mut rng = event_rng(seed, CTX_PATHS, 0, 0, i as u64);
                let (truth, values) = self.draw_group(&mut rng, &all_levels);
                PathRecord {
                    truth,
                    levels: values,
                }
            })
            .collect())
    }

    /// Evaluate the listed levels (1-based, strictly increasing) on one
    /// shared latent draw from `rng`. Returns `(Z, values)`.
    pub(crate) fn draw_group<R: Rng>(&self, rng: &mut R, levels: &[usize]) -> (f64, Vec<f64>) {
        let q = self.rates.order();
        let normals: Vec<f64> = (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut latent = vec![0.0f64; q];
        for i in 0..q {
            let mut acc = self.mean[i];
            for k in 0..=i {
                acc += self.latent_factor[(i, k)] * normals[k];
            }
            latent[i] = acc;
        }
        let truth = latent[0];
        let values = levels
            .iter()
            .map(|&level| {
                let mut z = truth;
                for j in 2..=q {
                    z += latent[j - 1] * self.weight::<f64>(level, j);
                }
                if self.noise_scale > 0.0 {
                    let xi: f64 = rng.sample(StandardNormal);
                    z += self.noise_sd(level) * xi;
                }
                z
            })
            .collect();
        (truth, values)
    }
}

/// Lower-triangular factor of an SPD (or, with `allow_semidefinite`, PSD)
/// matrix; PSD zero pivots produce zero columns.
fn spd_factor(a: &Matrix<f64>, allow_semidefinite: bool) -> Result<Matrix<f64>> {
    let n = a.rows();
    let mut l = Matrix::<f64>::zeros(n, n);
    let scale: f64 = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if allow_semidefinite {
            if d < -tol {
                return Err(Error::numerical(
                    "latent covariance is not positive semidefinite",
                ));
            }
            if d <= tol {
                continue; // zero column
            }
        } else if !(d > 0.0) {
            return Err(Error::numerical(format!(
                "latent covariance is not positive definite (pivot {} of {n})",
                j + 1
            )));
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::DD;

    /// Family of the moments examples: identity latent covariance, zero
    /// mean, rates (0,1,2,3), noise 0.1 at rate 3.
    fn identity_family() -> ExpansionFamily {
        let rates = RateVector::new(vec![0.0, 1.0, 2.0, 3.0], 2.0).unwrap();
        ExpansionFamily::new(4, rates, vec![0.0; 4], Matrix::identity(4), 0.1, 3.0, 0).unwrap()
    }

    #[test]
    fn variance_of_first_level_closed_form() {
        // Var(Z_1) = 1 + 2^-2 + 2^-4 + 2^-6 + 0.01 * 2^-6, evaluated by hand
        // and cross-checked by the sampling test below.
        let m = identity_family().moments::<f64>();
        assert!((m.cov[(0, 0)] - 1.32828125).abs() < 1e-15);
    }

    #[test]
    fn covariance_of_first_two_levels_closed_form() {
        let m = identity_family().moments::<f64>();
        assert!((m.cov[(0, 1)] - 1.142578125).abs() < 1e-15);
        assert!((m.cov[(1, 0)] - 1.142578125).abs() < 1e-15);
    }

    #[test]
    fn zero_mean_family_has_zero_mu() {
        let m = identity_family().moments::<f64>();
        assert!(m.mu.iter().all(|&x| x == 0.0));
        assert_eq!(m.truth_mean, 0.0);
    }

    #[test]
    fn moments_match_between_f64_and_dd() {
        let (family, _) = ExpansionFamily::toy_exp(2);
        let a = family.moments::<f64>();
        let b = family.moments::<DD>();
        for i in 0..4 {
            for j in 0..4 {
                let d = (a.cov[(i, j)] - b.cov[(i, j)].to_f64()).abs();
                assert!(d < 1e-14 * a.cov[(i, j)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn toy_cost_is_four_to_level_minus_one() {
        let (_, cost) = ExpansionFamily::toy_exp(0);
        for level in 1..=4usize {
            let expect = 4f64.powi(level as i32 - 1);
            assert_eq!(cost.level_cost(level).unwrap(), expect);
        }
    }

    #[test]
    fn geometric_cost_examples() {
        let cost = CostModel::geometric(1e-6, 6.0).unwrap();
        assert!((cost.level_cost(1).unwrap() - 6.4e-5).abs() < 1e-18);
        let cost2 = CostModel::geometric(1.0, 2.0).unwrap();
        let ratio = cost2.level_cost(5).unwrap() / cost2.level_cost(4).unwrap();
        assert_eq!(ratio, 4.0);
    }

    #[test]
    fn table_cost_echoes_entries() {
        let cost = CostModel::table(vec![1.0, 4.0, 9.0]).unwrap();
        assert_eq!(cost.level_cost(2).unwrap(), 4.0);
        assert!(cost.level_cost(4).is_err());
        assert!(cost.level_cost(0).is_err());
    }

    #[test]
    fn degenerate_family_is_deterministic() {
        let rates = RateVector::new(vec![0.0, 1.0], 1.0).unwrap();
        let mean = vec![2.0, 3.0];
        let family = ExpansionFamily::new_degenerate(
            3,
            rates,
            mean,
            Matrix::zeros(2, 2),
            0.0,
            1.0,
            0,
        )
        .unwrap();
        let paths = family.sample_paths(42, 5).unwrap();
        for p in &paths {
            assert_eq!(p.truth, 2.0);
            for (idx, &z) in p.levels.iter().enumerate() {
                let level = idx + 1;
                let expect = 2.0 + 3.0 * f64::exp2(-(level as f64));
                assert!((z - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn equal_seeds_reproduce_paths() {
        let (family, _) = ExpansionFamily::toy_exp(0);
        let a = family.sample_paths(9, 100).unwrap();
        let b = family.sample_paths(9, 100).unwrap();
        assert_eq!(a, b);
        let c = family.sample_paths(10, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_within_clt_band() {
        let (family, _) = ExpansionFamily::toy_exp(0);
        let n = 200_000;
        let paths = family.sample_paths(123, n).unwrap();
        let m = family.moments::<f64>();
        let mean1: f64 = paths.iter().map(|p| p.levels[0]).sum::<f64>() / n as f64;
        let band = 4.0 * (m.cov[(0, 0)] / n as f64).sqrt();
        assert!(
            (mean1 - m.mu[0]).abs() < band,
            "mean {mean1} outside ±{band} of {}",
            m.mu[0]
        );
    }

    #[test]
    fn empirical_covariance_matches_moments() {
        let (family, _) = ExpansionFamily::toy_exp(0);
        let n = 200_000usize;
        let paths = family.sample_paths(7, n).unwrap();
        let m = family.moments::<f64>();
        let l = family.levels();
        let mut mean = vec![0.0; l];
        for p in &paths {
            for i in 0..l {
                mean[i] += p.levels[i];
            }
        }
        for v in &mut mean {
            *v /= n as f64;
        }
        for i in 0..l {
            for j in i..l {
                let mut acc = 0.0;
                for p in &paths {
                    acc += (p.levels[i] - mean[i]) * (p.levels[j] - mean[j]);
                }
                let emp = acc / (n as f64 - 1.0);
                // Standard error of a Gaussian covariance estimate.
                let se = ((m.cov[(i, i)] * m.cov[(j, j)] + m.cov[(i, j)] * m.cov[(i, j)])
                    / n as f64)
                    .sqrt();
                assert!(
                    (emp - m.cov[(i, j)]).abs() < 5.0 * se,
                    "entry ({i},{j}): emp {emp} vs analytic {} (se {se})",
                    m.cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn pair_difference_variance_decays_at_twice_gamma2() {
        // Var(Z_ℓ - Z_{ℓ-1}) from the analytic covariance, slope vs ℓ.
        let (family, _) = ExpansionFamily::toy_exp_with(10, 0, vec![0.0; 4]);
        let m = family.moments::<DD>();
        let mut pts = Vec::new();
        for level in 4..=10usize {
            let (i, j) = (level - 1, level - 2);
            let v = m.cov[(i, i)] + m.cov[(j, j)] - m.cov[(i, j)] - m.cov[(j, i)];
            pts.push((level as f64, v.to_f64().log2()));
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let expect = -2.0 * family.rates().gamma(2);
        assert!(
            (slope - expect).abs() < 0.1 * expect.abs(),
            "slope {slope} vs {expect}"
        );
    }

    #[test]
    fn invalid_rates_are_rejected() {
        assert!(RateVector::new(vec![0.0, 2.0, 2.0], 1.0).is_err());
        assert!(RateVector::new(vec![1.0, 2.0], 1.0).is_err());
        assert!(RateVector::new(vec![0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn non_spd_latent_covariance_rejected() {
        let rates = RateVector::new(vec![0.0, 1.0], 1.0).unwrap();
        let mut cov = Matrix::<f64>::zeros(2, 2);
        cov[(0, 0)] = 1.0;
        cov[(0, 1)] = 2.0;
        cov[(1, 0)] = 2.0;
        cov[(1, 1)] = 1.0;
        assert!(ExpansionFamily::new(2, rates, vec![0.0; 2], cov, 0.1, 1.0, 0).is_err());
    }
}
