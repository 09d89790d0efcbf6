use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wealth through time, starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthPath {
    /// One label per wealth value; the first marks the starting point.
    pub timestamps: Vec<String>,
    pub wealth: Vec<f64>,
    /// `returns[t]` takes `wealth[t]` to `wealth[t + 1]`.
    pub returns: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("paths are not aligned: {0}")]
    Misaligned(String),
    #[error("need at least 2 periods, got {0}")]
    TooShort(usize),
    #[error("benchmark has zero variance; beta is undefined")]
    ZeroVarianceBenchmark,
    #[error("path has zero variance; the Sharpe ratio is undefined")]
    ZeroVariancePath,
    #[error("beta is zero; the Treynor ratio is undefined")]
    ZeroBeta,
    #[error("active returns have zero variance; the information ratio is undefined")]
    ZeroTrackingError,
    #[error("return {0} at period {1} would make wealth non-positive")]
    NonPositiveWealth(f64, usize),
}

impl WealthPath {
    /// Compounds `returns` from unit wealth.
    pub fn from_returns(
        start: &str,
        periods: &[String],
        returns: &[f64],
    ) -> Result<Self, MetricsError> {
        if periods.len() != returns.len() {
            return Err(MetricsError::Misaligned(format!(
                "{} labels for {} returns",
                periods.len(),
                returns.len()
            )));
        }
        let mut wealth = Vec::with_capacity(returns.len() + 1);
        wealth.push(1.0);
        for (t, &r) in returns.iter().enumerate() {
            if !(r > -1.0) {
                return Err(MetricsError::NonPositiveWealth(r, t));
            }
            wealth.push(wealth[t] * (1.0 + r));
        }
        let mut timestamps = vec![start.to_string()];
        timestamps.extend(periods.iter().cloned());
        Ok(Self {
            timestamps,
            wealth,
            returns: returns.to_vec(),
        })
    }

    pub fn n_periods(&self) -> usize {
        self.returns.len()
    }

    pub fn final_wealth(&self) -> f64 {
        *self.wealth.last().expect("wealth starts at 1")
    }

    /// CSV with columns `timestamp,wealth,return`; the first row has an empty return.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,wealth,return\n");
        for (t, (label, w)) in self.timestamps.iter().zip(&self.wealth).enumerate() {
            let r = if t == 0 {
                String::new()
            } else {
                self.returns[t - 1].to_string()
            };
            out.push_str(&format!("{label},{w},{r}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub annualized_return: f64,
    pub annualized_std: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub beta: f64,
    pub jensen_alpha: f64,
    pub treynor: f64,
    pub information_ratio: f64,
}

/// Names of the metrics in report order.
pub const METRIC_NAMES: [&str; 8] = [
    "annualized_return",
    "annualized_std",
    "sharpe",
    "max_drawdown",
    "beta",
    "jensen_alpha",
    "treynor",
    "information_ratio",
];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample covariance with divisor n − 1. A constant series gives exactly 0.
fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (a.len() as f64 - 1.0)
}

/// W_T^{periods_per_year / T} − 1.
pub fn annualized_return(path: &WealthPath, periods_per_year: f64) -> f64 {
    path.final_wealth()
        .powf(periods_per_year / path.n_periods() as f64)
        - 1.0
}

/// Per-period sample standard deviation times √periods_per_year.
pub fn annualized_std(path: &WealthPath, periods_per_year: f64) -> f64 {
    covariance(&path.returns, &path.returns).sqrt() * periods_per_year.sqrt()
}

/// Largest `1 − W_u/W_t` over `t ≤ u`.
pub fn max_drawdown(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &w in wealth {
        peak = peak.max(w);
        worst = worst.max(1.0 - w / peak);
    }
    worst
}

pub fn beta(path: &WealthPath, bench: &WealthPath) -> Result<f64, MetricsError> {
    let var = covariance(&bench.returns, &bench.returns);
    if var == 0.0 {
        return Err(MetricsError::ZeroVarianceBenchmark);
    }
    Ok(covariance(&path.returns, &bench.returns) / var)
}

pub fn sharpe(
    path: &WealthPath,
    risk_free: f64,
    periods_per_year: f64,
) -> Result<f64, MetricsError> {
    let sd = annualized_std(path, periods_per_year);
    if sd == 0.0 {
        return Err(MetricsError::ZeroVariancePath);
    }
    Ok((annualized_return(path, periods_per_year) - risk_free) / sd)
}

pub fn jensen_alpha(
    path: &WealthPath,
    bench: &WealthPath,
    risk_free: f64,
    periods_per_year: f64,
) -> Result<f64, MetricsError> {
    let b = beta(path, bench)?;
    let market = annualized_return(bench, periods_per_year);
    Ok(annualized_return(path, periods_per_year) - (risk_free + b * (market - risk_free)))
}

pub fn treynor(
    path: &WealthPath,
    bench: &WealthPath,
    risk_free: f64,
    periods_per_year: f64,
) -> Result<f64, MetricsError> {
    let b = beta(path, bench)?;
    if b == 0.0 {
        return Err(MetricsError::ZeroBeta);
    }
    Ok((annualized_return(path, periods_per_year) - risk_free) / b)
}

/// Annualized mean active return over annualized tracking error.
pub fn information_ratio(
    path: &WealthPath,
    bench: &WealthPath,
    periods_per_year: f64,
) -> Result<f64, MetricsError> {
    let active: Vec<f64> = path
        .returns
        .iter()
        .zip(&bench.returns)
        .map(|(a, b)| a - b)
        .collect();
    let sd = covariance(&active, &active).sqrt();
    if sd == 0.0 {
        return Err(MetricsError::ZeroTrackingError);
    }
    Ok(mean(&active) * periods_per_year / (sd * periods_per_year.sqrt()))
}

fn check(path: &WealthPath, bench: &WealthPath) -> Result<(), MetricsError> {
    if path.timestamps != bench.timestamps {
        return Err(MetricsError::Misaligned("timestamps differ".into()));
    }
    if path.n_periods() < 2 {
        return Err(MetricsError::TooShort(path.n_periods()));
    }
    Ok(())
}

/// Every metric, each computed independently; undefined ones are errors.
pub fn metric_cells(
    path: &WealthPath,
    bench: &WealthPath,
    risk_free: f64,
    periods_per_year: f64,
) -> Result<[Result<f64, MetricsError>; 8], MetricsError> {
    check(path, bench)?;
    Ok([
        Ok(annualized_return(path, periods_per_year)),
        Ok(annualized_std(path, periods_per_year)),
        sharpe(path, risk_free, periods_per_year),
        Ok(max_drawdown(&path.wealth)),
        beta(path, bench),
        jensen_alpha(path, bench, risk_free, periods_per_year),
        treynor(path, bench, risk_free, periods_per_year),
        information_ratio(path, bench, periods_per_year),
    ])
}

/// All eight metrics, failing on the first undefined one.
pub fn compute_metrics(
    path: &WealthPath,
    bench: &WealthPath,
    risk_free: f64,
    periods_per_year: f64,
) -> Result<MetricsReport, MetricsError> {
    let [a, b, c, d, e, f, g, h] = metric_cells(path, bench, risk_free, periods_per_year)?;
    Ok(MetricsReport {
        annualized_return: a?,
        annualized_std: b?,
        sharpe: c?,
        max_drawdown: d?,
        beta: e?,
        jensen_alpha: f?,
        treynor: g?,
        information_ratio: h?,
    })
}
