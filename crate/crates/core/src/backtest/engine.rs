use serde::{Deserialize, Serialize};

use super::metrics::WealthPath;
use super::strategy::{allocate, Strategy};
use super::BacktestError;
use crate::dynamics::InvestorState;
use crate::market_data::{rolling_windows, ScenarioSet, WindowPlan};
use crate::par;

/// Aversion parameters used by DRP at one rebalance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AversionAudit {
    pub window: usize,
    pub rebalance_date: String,
    pub wealth: f64,
    pub loss_aversion: f64,
    pub reference_point: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub label: String,
    pub path: WealthPath,
    /// Weights chosen at each rebalance.
    pub allocations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestOutput {
    /// One run per strategy, in input order.
    pub runs: Vec<StrategyRun>,
    /// Per-period equal-weighted average of all asset returns.
    pub benchmark: WealthPath,
    pub audit: Vec<AversionAudit>,
}

/// Holding-period returns of a buy-and-hold position started at `weights`.
fn drift_returns(weights: &[f64], holding: &ScenarioSet) -> Vec<f64> {
    let xi = holding.returns();
    let mut value = weights.to_vec();
    let mut total: f64 = value.iter().sum();
    (0..holding.n_scenarios())
        .map(|t| {
            for (j, v) in value.iter_mut().enumerate() {
                *v *= 1.0 + xi[(t, j)];
            }
            let next: f64 = value.iter().sum();
            let r = next / total - 1.0;
            total = next;
            r
        })
        .collect()
}

/// Rebalances at every window start and holds until the next one.
///
/// Each window holds for `step` periods, so `step` may not exceed the plan's
/// holding length. DRP with a dynamic `investor` refreshes its loss aversion
/// and reference point from its own wealth before every rebalance after the
/// first.
pub fn run_backtest(
    data: &ScenarioSet,
    plan: &WindowPlan,
    strategies: &[Strategy],
    investor: Option<InvestorState>,
) -> Result<BacktestOutput, BacktestError> {
    if strategies.is_empty() {
        return Err(BacktestError::InvalidStrategy("no strategies given".into()));
    }
    if plan.step > plan.holding_length {
        return Err(BacktestError::InvalidPlan(format!(
            "step {} exceeds holding length {}; periods between windows would go unheld",
            plan.step, plan.holding_length
        )));
    }
    let windows = rolling_windows(data, plan)?;
    let hold = plan.step;
    let windows: Vec<_> = windows
        .into_iter()
        .map(|w| -> Result<_, BacktestError> {
            let holding = w.holding.slice_rows(0, hold.min(w.holding.n_scenarios()))?;
            Ok((w.offset, w.estimation, holding))
        })
        .collect::<Result<_, _>>()?;

    let start_label = windows[0]
        .1
        .period_ids()
        .last()
        .cloned()
        .unwrap_or_default();
    let periods: Vec<String> = windows
        .iter()
        .flat_map(|w| w.2.period_ids().to_vec())
        .collect();

    let runs = par::map(
        strategies,
        |strategy| -> Result<(StrategyRun, Vec<AversionAudit>), BacktestError> {
            let dynamic = matches!(strategy, Strategy::Drp(_))
                .then_some(investor)
                .flatten();
            let mut state = dynamic;
            let mut returns = Vec::with_capacity(periods.len());
            let mut allocations = Vec::with_capacity(windows.len());
            let mut audit = Vec::new();
            let mut wealth = 1.0;
            for (w, (_, estimation, holding)) in windows.iter().enumerate() {
                let profile = match (strategy, state.as_mut()) {
                    (Strategy::Drp(cfg), Some(st)) => {
                        if w > 0 {
                            *st = st.observe(wealth)?;
                        }
                        audit.push(AversionAudit {
                            window: w,
                            rebalance_date: estimation
                                .period_ids()
                                .last()
                                .cloned()
                                .unwrap_or_default(),
                            wealth,
                            loss_aversion: st.loss_aversion,
                            reference_point: cfg
                                .reference
                                .reference_for(estimation)?
                                .unwrap_or(st.reference),
                        });
                        Some(
                            cfg.profile
                                .with_loss_aversion(st.loss_aversion)
                                .with_reference_point(st.reference),
                        )
                    }
                    _ => None,
                };
                let x = allocate(strategy, estimation, profile)?;
                for r in drift_returns(&x, holding) {
                    if !(r > -1.0) {
                        return Err(BacktestError::NonPositiveWealth(strategy.label().into()));
                    }
                    wealth *= 1.0 + r;
                    returns.push(r);
                }
                allocations.push(x);
            }
            let path = WealthPath::from_returns(&start_label, &periods, &returns)?;
            Ok((
                StrategyRun {
                    label: strategy.label().into(),
                    path,
                    allocations,
                },
                audit,
            ))
        },
    );

    let mut out = Vec::with_capacity(runs.len());
    let mut audit = Vec::new();
    for r in runs {
        let (run, a) = r?;
        out.push(run);
        audit.extend(a);
    }
    let bench_returns: Vec<f64> = windows
        .iter()
        .flat_map(|w| {
            w.2.returns()
                .row_iter()
                .map(|row| row.mean())
                .collect::<Vec<_>>()
        })
        .collect();
    let benchmark = WealthPath::from_returns(&start_label, &periods, &bench_returns)?;
    Ok(BacktestOutput {
        runs: out,
        benchmark,
        audit,
    })
}

/// Benchmark path from an external return series keyed by period label.
pub fn benchmark_from_series(
    output: &BacktestOutput,
    labels: &[String],
    values: &[f64],
) -> Result<WealthPath, BacktestError> {
    let first = &output.benchmark;
    let periods = &first.timestamps[1..];
    let returns = periods
        .iter()
        .map(|p| {
            labels
                .iter()
                .position(|l| l == p)
                .map(|i| values[i])
                .ok_or_else(|| {
                    BacktestError::MissingData(format!("benchmark has no return for period {p}"))
                })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(WealthPath::from_returns(
        &first.timestamps[0],
        periods,
        &returns,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (1..=n).map(|t| t.to_string()).collect()
    }

    #[test]
    fn single_asset_compounds() {
        let m = nalgebra::DMatrix::from_column_slice(4, 1, &[0.0, 0.02, 0.1, -0.1]);
        let s = ScenarioSet::new(m, vec!["a".into()], labels(4)).unwrap();
        let plan = WindowPlan::new(2, 2, 2).unwrap();
        let out = run_backtest(&s, &plan, &[Strategy::EqualWeight], None).unwrap();
        assert!((out.runs[0].path.final_wealth() - 0.99).abs() < 1e-15);
        assert_eq!(out.runs[0].path.timestamps, vec!["2", "3", "4"]);
    }

    #[test]
    fn equal_weight_on_identical_assets_matches_one_asset() {
        let col = [0.01, -0.02, 0.03, 0.01, 0.02, -0.01, 0.0, 0.05];
        let one = ScenarioSet::new(
            nalgebra::DMatrix::from_column_slice(8, 1, &col),
            vec!["a".into()],
            labels(8),
        )
        .unwrap();
        let mut both = col.to_vec();
        both.extend_from_slice(&col);
        let two = ScenarioSet::new(
            nalgebra::DMatrix::from_column_slice(8, 2, &both),
            vec!["a".into(), "b".into()],
            labels(8),
        )
        .unwrap();
        let plan = WindowPlan::new(3, 2, 2).unwrap();
        let a = run_backtest(&one, &plan, &[Strategy::EqualWeight], None).unwrap();
        let b = run_backtest(&two, &plan, &[Strategy::EqualWeight], None).unwrap();
        assert_eq!(a.runs[0].path.wealth, b.runs[0].path.wealth);
    }

    #[test]
    fn buy_and_hold_drifts() {
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let s = ScenarioSet::new(m, vec!["a".into(), "b".into()], labels(2)).unwrap();
        // 0.5/0.5 → values (1.0, 0.5) → second period (1.0, 1.0).
        let r = drift_returns(&[0.5, 0.5], &s);
        assert_eq!(r[0], 0.5);
        assert!((r[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn step_longer_than_holding_is_rejected() {
        let s = ScenarioSet::from_rows(&vec![vec![0.0, 0.0]; 10]).unwrap();
        let plan = WindowPlan::new(2, 2, 3).unwrap();
        assert!(matches!(
            run_backtest(&s, &plan, &[Strategy::EqualWeight], None),
            Err(BacktestError::InvalidPlan(_))
        ));
    }
}
