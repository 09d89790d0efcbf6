//! The robust portfolio model: aversion parameters, the piecewise-linear
//! utility, the closed-form worst-case objective and its dual certificate.
//!
//! For a long-only portfolio `x` the worst-case expected utility over the
//! type-1 Wasserstein ball of radius θ around the empirical distribution is
//!
//! ```text
//!     inf E[h(x, ξ)] = −(1/S) Σᵢ νᵢ − λθ,
//!     νᵢ = max{ φR̂ − (1+φ) ξ̂ᵢᵀx,  −ξ̂ᵢᵀx },   λ = (1+φ) maxⱼ xⱼ,
//! ```
//!
//! and the full objective subtracts the variance penalty ½𝒜 xᵀΣ̂x.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{sample_covariance, CovarianceEstimate, DataError, ScenarioSet};

/// Smallest accepted risk aversion. Values this small behave as risk neutral.
pub const RISK_AVERSION_FLOOR: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;
const SUPPORT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid aversion profile: {0}")]
    InvalidProfile(String),
    #[error("invalid selection: {0}")]
    InvalidSelection(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Investor aversion characteristics (φ, 𝒜, θ, R̂).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AversionProfile {
    /// φ ≥ 0, extra slope applied to shortfall below the reference point.
    pub loss_aversion: f64,
    /// 𝒜 > 0, weight of the ½xᵀΣ̂x variance penalty.
    pub risk_aversion: f64,
    /// θ ≥ 0, Wasserstein radius of the ambiguity set.
    pub ambiguity_radius: f64,
    /// R̂, per-period return separating gains from losses.
    pub reference_point: f64,
}

impl Default for AversionProfile {
    fn default() -> Self {
        Self {
            loss_aversion: 1.5,
            risk_aversion: 1.5,
            ambiguity_radius: 0.003,
            reference_point: 0.001,
        }
    }
}

impl AversionProfile {
    pub fn new(
        loss_aversion: f64,
        risk_aversion: f64,
        ambiguity_radius: f64,
        reference_point: f64,
    ) -> Result<Self, ModelError> {
        let p = Self {
            loss_aversion,
            risk_aversion,
            ambiguity_radius,
            reference_point,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.loss_aversion.is_finite() && self.loss_aversion >= 0.0) {
            return Err(ModelError::InvalidProfile(format!(
                "loss aversion must be finite and >= 0, got {}",
                self.loss_aversion
            )));
        }
        if !(self.risk_aversion.is_finite() && self.risk_aversion >= RISK_AVERSION_FLOOR) {
            return Err(ModelError::InvalidProfile(format!(
                "risk aversion must be finite and >= {RISK_AVERSION_FLOOR:e}, got {}",
                self.risk_aversion
            )));
        }
        if !(self.ambiguity_radius.is_finite() && self.ambiguity_radius >= 0.0) {
            return Err(ModelError::InvalidProfile(format!(
                "ambiguity radius must be finite and >= 0, got {}",
                self.ambiguity_radius
            )));
        }
        if !self.reference_point.is_finite() {
            return Err(ModelError::InvalidProfile(
                "reference point must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn with_radius(mut self, theta: f64) -> Self {
        self.ambiguity_radius = theta;
        self
    }

    pub fn with_loss_aversion(mut self, phi: f64) -> Self {
        self.loss_aversion = phi;
        self
    }

    pub fn with_reference_point(mut self, r: f64) -> Self {
        self.reference_point = r;
        self
    }

    pub fn with_risk_aversion(mut self, a: f64) -> Self {
        self.risk_aversion = a;
        self
    }
}

/// Weight vector `x`, support indicator `y` and cardinality `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSelection {
    pub weights: Vec<f64>,
    pub support: Vec<bool>,
    pub cardinality: usize,
}

impl PortfolioSelection {
    /// Places `sub_weights` (one per selected asset) on the `selected` indices.
    pub fn from_subset(
        n_assets: usize,
        selected: &[usize],
        sub_weights: &[f64],
    ) -> Result<Self, ModelError> {
        if selected.len() != sub_weights.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} selected assets but {} weights",
                selected.len(),
                sub_weights.len()
            )));
        }
        let mut weights = vec![0.0; n_assets];
        let mut support = vec![false; n_assets];
        for (&j, &w) in selected.iter().zip(sub_weights) {
            if j >= n_assets || support[j] {
                return Err(ModelError::InvalidSelection(format!("bad asset index {j}")));
            }
            weights[j] = w;
            support[j] = true;
        }
        let sel = Self {
            weights,
            support,
            cardinality: selected.len(),
        };
        sel.validate()?;
        Ok(sel)
    }

    /// Full-support selection over all assets.
    pub fn full(weights: Vec<f64>) -> Result<Self, ModelError> {
        let n = weights.len();
        let sel = Self {
            weights,
            support: vec![true; n],
            cardinality: n,
        };
        sel.validate()?;
        Ok(sel)
    }

    pub fn selected(&self) -> Vec<usize> {
        self.support
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.weights.len() != self.support.len() {
            return Err(ModelError::DimensionMismatch(
                "weights and support lengths differ".into(),
            ));
        }
        check_simplex(&self.weights).map_err(ModelError::InvalidSelection)?;
        let k = self.support.iter().filter(|&&b| b).count();
        if k != self.cardinality {
            return Err(ModelError::InvalidSelection(format!(
                "support has {k} assets but cardinality is {}",
                self.cardinality
            )));
        }
        for (j, (&x, &y)) in self.weights.iter().zip(&self.support).enumerate() {
            let cap = if y { 1.0 } else { 0.0 };
            if x > cap + SUPPORT_TOL {
                return Err(ModelError::InvalidSelection(format!(
                    "asset {j} has weight {x} outside its support"
                )));
            }
        }
        Ok(())
    }
}

fn check_simplex(x: &[f64]) -> Result<(), String> {
    if x.is_empty() {
        return Err("empty weight vector".into());
    }
    if let Some((j, v)) = x
        .iter()
        .enumerate()
        .find(|(_, &v)| !v.is_finite() || !(-SUPPORT_TOL..=1.0 + SUPPORT_TOL).contains(&v))
    {
        return Err(format!("weight {j} = {v} outside [0, 1]"));
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("weights sum to {sum}, expected 1"));
    }
    Ok(())
}

/// Auxiliary dual variables certifying the worst-case expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub lambda: f64,
    pub nu: Vec<f64>,
}

impl DualCertificate {
    /// −(1/S)Σνᵢ − λθ.
    pub fn value(&self, theta: f64) -> f64 {
        -self.nu.iter().sum::<f64>() / self.nu.len() as f64 - self.lambda * theta
    }
}

/// Sign of the portfolio-return term in the gain-region dual row.
///
/// `Negative` (`νᵢ ≥ −ξ̂ᵢᵀx`) is the row that follows from the supremum of
/// `−ξᵀx − λ‖ξ − ξ̂ᵢ‖₁`. `Positive` (`νᵢ ≥ ξ̂ᵢᵀx`) is kept only so the tests
/// can show that it breaks the zero-radius identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainRowSign {
    Negative,
    Positive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrpInstance {
    pub scenarios: ScenarioSet,
    pub covariance: CovarianceEstimate,
    pub profile: AversionProfile,
    pub cardinality: usize,
}

impl DrpInstance {
    pub fn new(
        scenarios: ScenarioSet,
        covariance: CovarianceEstimate,
        profile: AversionProfile,
        cardinality: usize,
    ) -> Result<Self, ModelError> {
        profile.validate()?;
        if covariance.dim() != scenarios.n_assets() {
            return Err(ModelError::InvalidInstance(format!(
                "covariance is {0}x{0} but there are {1} assets",
                covariance.dim(),
                scenarios.n_assets()
            )));
        }
        if cardinality == 0 || cardinality > scenarios.n_assets() {
            return Err(ModelError::InvalidInstance(format!(
                "cardinality {cardinality} outside 1..={}",
                scenarios.n_assets()
            )));
        }
        Ok(Self {
            scenarios,
            covariance,
            profile,
            cardinality,
        })
    }

    /// Uses the sample covariance of `scenarios`.
    pub fn from_scenarios(
        scenarios: ScenarioSet,
        profile: AversionProfile,
        cardinality: usize,
    ) -> Result<Self, ModelError> {
        let cov = sample_covariance(&scenarios)?;
        Self::new(scenarios, cov, profile, cardinality)
    }

    pub fn n_assets(&self) -> usize {
        self.scenarios.n_assets()
    }

    pub fn n_scenarios(&self) -> usize {
        self.scenarios.n_scenarios()
    }

    pub fn with_profile(&self, profile: AversionProfile) -> Result<Self, ModelError> {
        profile.validate()?;
        Ok(Self {
            profile,
            ..self.clone()
        })
    }

    pub fn with_cardinality(&self, k: usize) -> Result<Self, ModelError> {
        Self::new(
            self.scenarios.clone(),
            self.covariance.clone(),
            self.profile,
            k,
        )
    }

    /// Same instance with a zero covariance matrix.
    pub fn without_covariance(&self) -> Self {
        let n = self.n_assets();
        Self {
            covariance: CovarianceEstimate::from_matrix(DMatrix::zeros(n, n))
                .expect("zero matrix is a valid covariance"),
            ..self.clone()
        }
    }
}

/// h(x, φ, R̂, ξ) = ξᵀx − φ·max{R̂ − ξᵀx, 0}.
pub fn piecewise_utility(
    x: &[f64],
    phi: f64,
    reference: f64,
    xi: &[f64],
) -> Result<f64, ModelError> {
    if x.len() != xi.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "weights have {} entries, returns have {}",
            x.len(),
            xi.len()
        )));
    }
    let r: f64 = x.iter().zip(xi).map(|(a, b)| a * b).sum();
    Ok(utility_of_return(r, phi, reference))
}

/// h as a function of the portfolio return `r = ξᵀx`.
#[inline]
pub fn utility_of_return(r: f64, phi: f64, reference: f64) -> f64 {
    r - phi * (reference - r).max(0.0)
}

/// Sample-average utility (1/S) Σᵢ h(x, ξ̂ᵢ).
pub fn nominal_utility(inst: &DrpInstance, x: &[f64]) -> f64 {
    let p = &inst.profile;
    let r = inst.scenarios.portfolio_returns(x);
    r.iter()
        .map(|&ri| utility_of_return(ri, p.loss_aversion, p.reference_point))
        .sum::<f64>()
        / r.len() as f64
}

/// Closed-form λ and ν for the weights `x` (assumed on the simplex).
pub fn certificate_for(inst: &DrpInstance, x: &[f64], sign: GainRowSign) -> DualCertificate {
    let phi = inst.profile.loss_aversion;
    let rhat = inst.profile.reference_point;
    let max_x = x.iter().copied().fold(0.0, f64::max);
    let nu = inst
        .scenarios
        .portfolio_returns(x)
        .into_iter()
        .map(|r| {
            let loss_row = phi * rhat - (1.0 + phi) * r;
            let gain_row = match sign {
                GainRowSign::Negative => -r,
                GainRowSign::Positive => r,
            };
            loss_row.max(gain_row)
        })
        .collect();
    DualCertificate {
        lambda: (1.0 + phi) * max_x,
        nu,
    }
}

/// λ = (1+φ)‖x‖∞ and νᵢ = max{φR̂ − (1+φ)ξ̂ᵢᵀx, −ξ̂ᵢᵀx}.
pub fn dual_certificate(inst: &DrpInstance, x: &[f64]) -> Result<DualCertificate, ModelError> {
    if x.len() != inst.n_assets() {
        return Err(ModelError::InvalidWeights(format!(
            "expected {} weights, got {}",
            inst.n_assets(),
            x.len()
        )));
    }
    check_simplex(x).map_err(ModelError::InvalidWeights)?;
    Ok(certificate_for(inst, x, GainRowSign::Negative))
}

/// Worst-case expected utility −(1/S)Σνᵢ − λθ for the weights `x`.
pub fn worst_case_expectation(inst: &DrpInstance, x: &[f64]) -> f64 {
    certificate_for(inst, x, GainRowSign::Negative).value(inst.profile.ambiguity_radius)
}

/// ½𝒜 xᵀΣ̂x.
pub fn risk_penalty(inst: &DrpInstance, x: &[f64]) -> f64 {
    0.5 * inst.profile.risk_aversion * inst.covariance.quad_form(x)
}

/// Objective without validating `x`; used on solver output.
pub fn objective_value(inst: &DrpInstance, x: &[f64]) -> f64 {
    worst_case_expectation(inst, x) - risk_penalty(inst, x)
}

/// f(x, y) = −(1/S)Σ max{cᵢ¹, cᵢ²} − θ(1+φ)‖x‖∞ − ½𝒜 xᵀΣ̂x.
pub fn evaluate_objective(inst: &DrpInstance, sel: &PortfolioSelection) -> Result<f64, ModelError> {
    if sel.weights.len() != inst.n_assets() {
        return Err(ModelError::InvalidSelection(format!(
            "selection has {} assets, instance has {}",
            sel.weights.len(),
            inst.n_assets()
        )));
    }
    if sel.cardinality != inst.cardinality {
        return Err(ModelError::InvalidSelection(format!(
            "selection cardinality {} differs from instance cardinality {}",
            sel.cardinality, inst.cardinality
        )));
    }
    sel.validate()?;
    Ok(objective_value(inst, &sel.weights))
}

/// μᵀx − ½𝒜 xᵀΣ̂x with μ the sample mean.
pub fn markowitz_utility(inst: &DrpInstance, x: &[f64]) -> f64 {
    let mu = inst.scenarios.mean_returns();
    mu.iter().zip(x).map(|(m, w)| m * w).sum::<f64>() - risk_penalty(inst, x)
}
