//! Wealth-dependent loss aversion and reference point between rebalances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("wealth must be positive, got previous {previous} and current {current}")]
    NonpositiveWealth { previous: f64, current: f64 },
    #[error("base loss aversion and reference point must be positive")]
    InvalidBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvestorType {
    /// Fixed aversion.
    Type0,
    /// Becomes more averse after losses.
    Type1,
    /// Becomes more averse after gains.
    Type2,
}

impl std::str::FromStr for InvestorType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "type0" | "0" => Ok(Self::Type0),
            "type1" | "1" => Ok(Self::Type1),
            "type2" | "2" => Ok(Self::Type2),
            other => Err(format!("unknown investor type '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvestorState {
    pub kind: InvestorType,
    pub wealth_prev: f64,
    pub wealth_now: f64,
    pub base_loss_aversion: f64,
    pub base_reference: f64,
    pub loss_aversion: f64,
    pub reference: f64,
}

impl InvestorState {
    /// State at the start of a backtest: unit wealth, base parameters.
    pub fn new(
        kind: InvestorType,
        base_loss_aversion: f64,
        base_reference: f64,
    ) -> Result<Self, DynamicsError> {
        if !(base_loss_aversion > 0.0 && base_reference > 0.0) {
            return Err(DynamicsError::InvalidBase);
        }
        Ok(Self {
            kind,
            wealth_prev: 1.0,
            wealth_now: 1.0,
            base_loss_aversion,
            base_reference,
            loss_aversion: base_loss_aversion,
            reference: base_reference,
        })
    }

    /// Records the wealth at the next rebalance and refreshes the parameters.
    pub fn observe(&self, wealth: f64) -> Result<Self, DynamicsError> {
        let mut next = Self {
            wealth_prev: self.wealth_now,
            wealth_now: wealth,
            ..*self
        };
        let (l, r) = update_aversion(&next)?;
        next.loss_aversion = l;
        next.reference = r;
        Ok(next)
    }
}

/// (λₜ, R̂ₜ) for the wealth change `wealth_prev → wealth_now`.
pub fn update_aversion(state: &InvestorState) -> Result<(f64, f64), DynamicsError> {
    let (prev, now) = (state.wealth_prev, state.wealth_now);
    if !(prev > 0.0 && now > 0.0) {
        return Err(DynamicsError::NonpositiveWealth {
            previous: prev,
            current: now,
        });
    }
    let base = (state.base_loss_aversion, state.base_reference);
    let ratio = match state.kind {
        InvestorType::Type0 => return Ok(base),
        InvestorType::Type1 if now < prev => prev / now,
        InvestorType::Type2 if now >= prev => now / prev,
        _ => return Ok(base),
    };
    Ok((base.0 + (ratio - 1.0), ratio * base.1))
}
