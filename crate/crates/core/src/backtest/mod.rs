//! Rolling-window backtests of DRP against the standard allocation rules,
//! and the performance metrics used to compare them.

mod engine;
mod metrics;
mod strategy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{benchmark_from_series, run_backtest, AversionAudit, BacktestOutput, StrategyRun};
pub use metrics::{
    annualized_return, annualized_std, beta, compute_metrics, information_ratio, jensen_alpha,
    max_drawdown, metric_cells, sharpe, treynor, MetricsError, MetricsReport, WealthPath,
    METRIC_NAMES,
};
pub use strategy::{
    allocate, market_value_weights, mvo_weights, risk_contributions, risk_parity, DrpSettings,
    IndexSeries, ReferenceRule, Strategy, RISK_PARITY_TOL,
};

use crate::dynamics::DynamicsError;
use crate::market_data::DataError;
use crate::model::ModelError;
use crate::qp::QpError;
use crate::search::SearchError;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("covariance has zero variance for asset {0}")]
    SingularCovariance(usize),
    #[error("estimation window has {0} periods; at least 2 are needed")]
    InsufficientData(usize),
    #[error("missing strategy data: {0}")]
    MissingData(String),
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("invalid window plan: {0}")]
    InvalidPlan(String),
    #[error("{0} lost all of its wealth")]
    NonPositiveWealth(String),
    #[error("{0} did not converge")]
    NoConvergence(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Metrics laid out with one row per metric and one column per path.
/// Undefined cells are `None` with the reason in `notes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub metrics: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub notes: Vec<String>,
}

/// Table over every strategy run plus the benchmark itself.
pub fn metrics_table(
    output: &BacktestOutput,
    benchmark: &WealthPath,
    risk_free: f64,
    periods_per_year: f64,
) -> Result<MetricsTable, BacktestError> {
    let mut columns: Vec<String> = output.runs.iter().map(|r| r.label.clone()).collect();
    columns.push("Benchmark".into());
    let paths: Vec<&WealthPath> = output
        .runs
        .iter()
        .map(|r| &r.path)
        .chain([benchmark])
        .collect();
    let mut values = vec![vec![None; columns.len()]; METRIC_NAMES.len()];
    let mut notes = Vec::new();
    for (c, path) in paths.iter().enumerate() {
        let cells = metric_cells(path, benchmark, risk_free, periods_per_year)?;
        for (m, cell) in cells.into_iter().enumerate() {
            match cell {
                Ok(v) => values[m][c] = Some(v),
                Err(e) => notes.push(format!("{} / {}: {e}", METRIC_NAMES[m], columns[c])),
            }
        }
    }
    Ok(MetricsTable {
        metrics: METRIC_NAMES.iter().map(|s| s.to_string()).collect(),
        columns,
        values,
        notes,
    })
}
