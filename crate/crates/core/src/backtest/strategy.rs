use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::BacktestError;
use crate::market_data::{sample_covariance, CovarianceEstimate, ScenarioSet};
use crate::model::{AversionProfile, DrpInstance};
use crate::qp::{ActiveSetOptions, PenaltyOptions, QuadraticProgram};
use crate::search::{run_search, Algorithm, TabuConfig};

/// Tolerance on the relative change of the risk parity iterate.
pub const RISK_PARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrpSettings {
    pub profile: AversionProfile,
    pub cardinality: usize,
    pub algorithm: Algorithm,
    pub tabu: TabuConfig,
    pub penalty: PenaltyOptions,
    #[serde(default)]
    pub reference: ReferenceRule,
}

/// Where DRP takes its reference return R̂ from at each rebalance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceRule {
    /// The profile's (or dynamic investor's) reference point.
    #[default]
    Constant,
    /// Mean index return over the estimation window. Without a series the
    /// index is the equal-weighted average of the window's assets.
    IndexMean { series: Option<IndexSeries> },
}

/// Index returns keyed by period label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl ReferenceRule {
    /// Reference return for `estimation`, or `None` to keep the profile's.
    pub fn reference_for(&self, estimation: &ScenarioSet) -> Result<Option<f64>, BacktestError> {
        let series = match self {
            Self::Constant => return Ok(None),
            Self::IndexMean { series } => series,
        };
        let periods = estimation.period_ids();
        let total: f64 = match series {
            None => estimation.returns().row_iter().map(|row| row.mean()).sum(),
            Some(s) => periods
                .iter()
                .map(|p| {
                    s.labels
                        .iter()
                        .position(|l| l == p)
                        .map(|i| s.values[i])
                        .ok_or_else(|| {
                            BacktestError::MissingData(format!("index has no value for period {p}"))
                        })
                })
                .sum::<Result<f64, _>>()?,
        };
        Ok(Some(total / periods.len() as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    EqualWeight,
    /// Weights proportional to market capitalization, one cap per asset.
    MarketValueWeight {
        caps: Vec<f64>,
    },
    RiskParity,
    /// Mean-variance with risk aversion γ.
    MarkowitzMvo {
        gamma: f64,
    },
    Drp(DrpSettings),
}

impl Strategy {
    /// Short column label.
    pub fn label(&self) -> &'static str {
        match self {
            Self::EqualWeight => "Eq",
            Self::MarketValueWeight { .. } => "MV",
            Self::RiskParity => "Rp",
            Self::MarkowitzMvo { .. } => "MVO",
            Self::Drp(_) => "DRP",
        }
    }
}

/// Weights chosen by `strategy` on the estimation window. `profile`
/// overrides the DRP profile (used by dynamic investors).
pub fn allocate(
    strategy: &Strategy,
    estimation: &ScenarioSet,
    profile: Option<AversionProfile>,
) -> Result<Vec<f64>, BacktestError> {
    let n = estimation.n_assets();
    match strategy {
        Strategy::EqualWeight => Ok(vec![1.0 / n as f64; n]),
        Strategy::MarketValueWeight { caps } => market_value_weights(caps, n),
        Strategy::RiskParity => {
            need_two(estimation)?;
            risk_parity(&sample_covariance(estimation)?)
        }
        Strategy::MarkowitzMvo { gamma } => {
            need_two(estimation)?;
            mvo_weights(
                &estimation.mean_returns(),
                &sample_covariance(estimation)?,
                *gamma,
            )
        }
        Strategy::Drp(cfg) => {
            need_two(estimation)?;
            let mut profile = profile.unwrap_or(cfg.profile);
            if let Some(r) = cfg.reference.reference_for(estimation)? {
                profile = profile.with_reference_point(r);
            }
            let inst = DrpInstance::from_scenarios(estimation.clone(), profile, cfg.cardinality)?;
            let res = run_search(&inst, cfg.algorithm, &cfg.tabu, &cfg.penalty)?;
            Ok(res.best_selection.weights)
        }
    }
}

fn need_two(s: &ScenarioSet) -> Result<(), BacktestError> {
    if s.n_scenarios() < 2 {
        return Err(BacktestError::InsufficientData(s.n_scenarios()));
    }
    Ok(())
}

pub fn market_value_weights(caps: &[f64], n: usize) -> Result<Vec<f64>, BacktestError> {
    if caps.len() != n {
        return Err(BacktestError::MissingData(format!(
            "{} market caps for {n} assets",
            caps.len()
        )));
    }
    if caps.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(BacktestError::MissingData(
            "market caps must be finite and non-negative".into(),
        ));
    }
    let total: f64 = caps.iter().sum();
    if total <= 0.0 {
        return Err(BacktestError::MissingData("market caps sum to zero".into()));
    }
    Ok(caps.iter().map(|c| c / total).collect())
}

/// Equal risk contribution weights by cyclical coordinate descent on
/// `½ yᵀΣy − (1/N)Σ ln yⱼ`, normalized to the simplex.
pub fn risk_parity(cov: &CovarianceEstimate) -> Result<Vec<f64>, BacktestError> {
    let sigma = cov.matrix();
    let n = cov.dim();
    if let Some(j) = (0..n).find(|&j| !(sigma[(j, j)] > 0.0)) {
        return Err(BacktestError::SingularCovariance(j));
    }
    let b = 1.0 / n as f64;
    let mut y: Vec<f64> = (0..n).map(|j| 1.0 / sigma[(j, j)].sqrt()).collect();
    let scale: f64 = y.iter().sum();
    y.iter_mut().for_each(|v| *v /= scale);
    for _ in 0..10_000 {
        let mut change: f64 = 0.0;
        for j in 0..n {
            let s_jj = sigma[(j, j)];
            let c: f64 = (0..n)
                .filter(|&i| i != j)
                .map(|i| sigma[(j, i)] * y[i])
                .sum();
            let next = (-c + (c * c + 4.0 * s_jj * b).sqrt()) / (2.0 * s_jj);
            change = change.max((next - y[j]).abs() / next);
            y[j] = next;
        }
        if change <= RISK_PARITY_TOL {
            let total: f64 = y.iter().sum();
            return Ok(y.iter().map(|v| v / total).collect());
        }
    }
    Err(BacktestError::NoConvergence("risk parity".into()))
}

/// xⱼ·(Σ̂x)ⱼ for every asset.
pub fn risk_contributions(cov: &CovarianceEstimate, x: &[f64]) -> Vec<f64> {
    let xv = DVector::from_column_slice(x);
    let sx = cov.matrix() * &xv;
    x.iter().zip(sx.iter()).map(|(a, b)| a * b).collect()
}

/// argmax μᵀx − (γ/2)xᵀΣ̂x over the simplex.
pub fn mvo_weights(
    mu: &[f64],
    cov: &CovarianceEstimate,
    gamma: f64,
) -> Result<Vec<f64>, BacktestError> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(BacktestError::InvalidStrategy(
            "MVO risk aversion must be non-negative".into(),
        ));
    }
    let n = mu.len();
    let qp = QuadraticProgram {
        hessian: cov.matrix() * gamma,
        linear: -DVector::from_column_slice(mu),
        eq_matrix: DMatrix::from_element(1, n, 1.0),
        eq_rhs: DVector::from_element(1, 1.0),
        ineq_matrix: -DMatrix::identity(n, n),
        ineq_rhs: DVector::zeros(n),
    };
    let sol = qp.solve_from(
        DVector::from_element(n, 1.0 / n as f64),
        &ActiveSetOptions::default(),
    )?;
    let mut x: Vec<f64> = sol.z.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    Ok(x)
}
