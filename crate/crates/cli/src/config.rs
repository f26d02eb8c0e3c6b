//! Run configuration: a single TOML document describing the model family,
//! the cost model, the estimators and the run parameters. Unknown keys are
//! rejected so typos fail loudly.

use std::path::Path;

use serde::Deserialize;

use mlblue::analysis::{BiasTarget, EstimatorKind, EstimatorSpec};
use mlblue::family::{CostModel, ExpansionFamily, RateVector};
use mlblue::Matrix;

use crate::AppError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: FamilyConfig,
    pub cost: CostConfig,
    #[serde(default, rename = "estimator")]
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub run: RunParams,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub levels: usize,
    /// Expansion exponents, first entry 0.
    pub rates: Vec<f64>,
    /// Mean of the latent vector; defaults to zero.
    pub mean: Option<Vec<f64>>,
    /// Latent covariance: the name of a preset or a flat row-major matrix.
    pub latent_cov: LatentCov,
    pub noise_scale: f64,
    pub noise_rate: f64,
    #[serde(default)]
    pub ell0: usize,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum LatentCov {
    Preset(String),
    Entries(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub mode: String,
    pub base: Option<f64>,
    pub rate: Option<f64>,
    pub table: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: String,
    /// Coupling bound: the telescope order for `re`, the group-size bound
    /// for `saob` (omit for unbounded).
    pub coupling: Option<usize>,
    /// Weighted-telescope variance order.
    pub s: Option<usize>,
    /// Extrapolation order of the bias target (weighted telescopes and the
    /// `re_t` bias target).
    pub t: Option<usize>,
    /// `unit_l` (default) or `re_t`.
    pub bias_target: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub budget: Option<f64>,
    pub eps: Option<f64>,
    pub eps_grid: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    /// `none` (default) or `ceil`.
    pub rounding: Option<String>,
    /// Accuracy shifts of the convergence study.
    pub ell0_values: Option<Vec<usize>>,
    /// Coupling orders of the convergence study.
    pub couplings: Option<Vec<usize>>,
    /// `dd` (default) or `f64`.
    pub precision: Option<String>,
    /// `grid` (default) or `levels`: sweep over an accuracy grid or over
    /// level counts with the squared bias as variance target.
    pub sweep_mode: Option<String>,
    pub levels_list: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    Dd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepMode {
    Grid,
    Levels,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            AppError::config(format!("cannot read {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| AppError::config(format!("{e}")))
    }

    pub fn family(&self) -> Result<ExpansionFamily, AppError> {
        let f = &self.family;
        let order = f.rates.len();
        let rates = RateVector::new(f.rates.clone(), self.gamma_cost_hint())
            .map_err(AppError::from_core_as_config)?;
        let mean = f.mean.clone().unwrap_or_else(|| vec![0.0; order]);
        let cov = match &f.latent_cov {
            LatentCov::Preset(name) => match name.as_str() {
                "toy-exp" => {
                    let mut m = Matrix::<f64>::zeros(order, order);
                    for i in 0..order {
                        for j in 0..order {
                            m[(i, j)] = (-((i as f64) - (j as f64)).abs()).exp();
                        }
                    }
                    m
                }
                "identity" => Matrix::<f64>::identity(order),
                other => {
                    return Err(AppError::config(format!(
                        "family.latent_cov: unknown preset '{other}' (use 'toy-exp', 'identity' or a flat matrix)"
                    )))
                }
            },
            LatentCov::Entries(flat) => {
                if flat.len() != order * order {
                    return Err(AppError::config(format!(
                        "family.latent_cov: got {} entries, expected {order}x{order}",
                        flat.len()
                    )));
                }
                Matrix::from_f64_rows(order, order, flat)
            }
        };
        ExpansionFamily::new(
            f.levels,
            rates,
            mean,
            cov,
            f.noise_scale,
            f.noise_rate,
            f.ell0,
        )
        .map_err(AppError::from_core_as_config)
    }

    fn gamma_cost_hint(&self) -> f64 {
        match (self.cost.mode.as_str(), self.cost.rate) {
            ("geometric", Some(rate)) => rate,
            _ => {
                // Fitted growth exponent of an explicit table; only used for
                // reporting, never for the cost values themselves.
                if let Some(table) = &self.cost.table {
                    if table.len() >= 2 && table.iter().all(|&w| w > 0.0) {
                        let n = (table.len() - 1) as f64;
                        let total: f64 = table
                            .windows(2)
                            .map(|w| (w[1] / w[0]).log2())
                            .sum();
                        return (total / n).max(1e-9);
                    }
                }
                1.0
            }
        }
    }

    pub fn cost_model(&self) -> Result<CostModel, AppError> {
        match self.cost.mode.as_str() {
            "geometric" => {
                let base = self.cost.base.ok_or_else(|| {
                    AppError::config("cost.base is required in geometric mode")
                })?;
                let rate = self.cost.rate.ok_or_else(|| {
                    AppError::config("cost.rate is required in geometric mode")
                })?;
                CostModel::geometric(base, rate).map_err(AppError::from_core_as_config)
            }
            "table" => {
                let table = self.cost.table.clone().ok_or_else(|| {
                    AppError::config("cost.table is required in table mode")
                })?;
                if table.len() < self.family.levels {
                    return Err(AppError::config(format!(
                        "cost.table has {} entries for {} levels",
                        table.len(),
                        self.family.levels
                    )));
                }
                CostModel::table(table).map_err(AppError::from_core_as_config)
            }
            other => Err(AppError::config(format!(
                "cost.mode must be 'geometric' or 'table', got '{other}'"
            ))),
        }
    }

    pub fn estimator_specs(&self) -> Result<Vec<EstimatorSpec>, AppError> {
        if self.estimators.is_empty() {
            return Err(AppError::config("at least one [[estimator]] is required"));
        }
        self.estimators.iter().map(|e| e.to_spec()).collect()
    }

    pub fn precision(&self) -> Result<Precision, AppError> {
        match self.run.precision.as_deref() {
            None | Some("dd") => Ok(Precision::Dd),
            Some("f64") => Ok(Precision::F64),
            Some(other) => Err(AppError::config(format!(
                "run.precision must be 'dd' or 'f64', got '{other}'"
            ))),
        }
    }

    pub fn rounding(&self) -> Result<mlblue::allocation::RoundingPolicy, AppError> {
        match self.run.rounding.as_deref() {
            None | Some("none") => Ok(mlblue::allocation::RoundingPolicy::None),
            Some("ceil") => Ok(mlblue::allocation::RoundingPolicy::Ceil),
            Some(other) => Err(AppError::config(format!(
                "run.rounding must be 'none' or 'ceil', got '{other}'"
            ))),
        }
    }

    pub fn sweep_mode(&self) -> Result<SweepMode, AppError> {
        match self.run.sweep_mode.as_deref() {
            None | Some("grid") => Ok(SweepMode::Grid),
            Some("levels") => Ok(SweepMode::Levels),
            Some(other) => Err(AppError::config(format!(
                "run.sweep_mode must be 'grid' or 'levels', got '{other}'"
            ))),
        }
    }

    pub fn budget(&self) -> Result<f64, AppError> {
        let p = self
            .run
            .budget
            .ok_or_else(|| AppError::config("run.budget is required for this command"))?;
        if !(p > 0.0) {
            return Err(AppError::config("run.budget must be positive"));
        }
        Ok(p)
    }

    pub fn replications(&self) -> Result<usize, AppError> {
        let r = self.run.replications.ok_or_else(|| {
            AppError::config("run.replications is required for this command")
        })?;
        if r < 2 {
            return Err(AppError::config("run.replications must be at least 2"));
        }
        Ok(r)
    }
}

impl EstimatorConfig {
    pub fn to_spec(&self) -> Result<EstimatorSpec, AppError> {
        let bias = match self.bias_target.as_deref() {
            // Weighted telescopes default to their own bias target.
            None if self.kind == "wre" => BiasTarget::ReOrder(self.t.ok_or_else(|| {
                AppError::config("estimator.t is required for kind = 'wre'")
            })?),
            None | Some("unit_l") => BiasTarget::FinestLevel,
            Some("re_t") => {
                let t = self.t.ok_or_else(|| {
                    AppError::config("estimator.t is required with bias_target = 're_t'")
                })?;
                BiasTarget::ReOrder(t)
            }
            Some(other) => {
                return Err(AppError::config(format!(
                    "estimator.bias_target must be 'unit_l' or 're_t', got '{other}'"
                )))
            }
        };
        let kind = match self.kind.as_str() {
            "mc" => EstimatorKind::Mc,
            "mlmc" => EstimatorKind::Mlmc,
            "re" => {
                let order = self.coupling.ok_or_else(|| {
                    AppError::config("estimator.coupling (the telescope order) is required for kind = 're'")
                })?;
                EstimatorKind::Re { order }
            }
            "wre" => {
                let s = self.s.ok_or_else(|| {
                    AppError::config("estimator.s is required for kind = 'wre'")
                })?;
                let t = self.t.ok_or_else(|| {
                    AppError::config("estimator.t is required for kind = 'wre'")
                })?;
                EstimatorKind::WeightedRe {
                    variance_order: s,
                    bias_order: t,
                }
            }
            "saob" => EstimatorKind::Saob {
                coupling: self.coupling,
            },
            other => {
                return Err(AppError::config(format!(
                    "estimator.kind must be one of mc|mlmc|re|wre|saob, got '{other}'"
                )))
            }
        };
        let spec = EstimatorSpec { kind, bias };
        spec.validate().map_err(AppError::from_core_as_config)?;
        Ok(spec)
    }
}
