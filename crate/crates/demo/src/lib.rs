//! Browser bindings for the DRP engine. Every call takes the returns as
//! wide CSV text plus a JSON options object and answers with JSON.

use drp_core::market_data::{read_returns, ScenarioSet};
use drp_core::model::{dual_certificate, AversionProfile, DrpInstance};
use drp_core::qp::PenaltyOptions;
use drp_core::search::{run_search, Algorithm, TabuConfig};
use drp_core::worst_case::{default_cap, worst_case_report, TransportMode};
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// The bundled 20-asset monthly dataset.
pub const SAMPLE_CSV: &str = include_str!("../../../data/synthetic_20.csv");

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    pub phi: f64,
    pub risk_aversion: f64,
    pub theta: f64,
    pub ref_point: f64,
    pub k: usize,
    pub algo: Algorithm,
    pub iters: usize,
    pub seed: u64,
    /// Use only the first `assets` columns (0 keeps all).
    pub assets: usize,
    /// Use only the last `periods` rows (0 keeps all).
    pub periods: usize,
}

impl Default for Options {
    fn default() -> Self {
        let p = AversionProfile::default();
        Self {
            phi: p.loss_aversion,
            risk_aversion: p.risk_aversion,
            theta: p.ambiguity_radius,
            ref_point: p.reference_point,
            k: 3,
            algo: Algorithm::Tabu,
            iters: 100,
            seed: 0,
            assets: 0,
            periods: 0,
        }
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn parse(csv: &str, options: &str) -> Result<(ScenarioSet, Options), String> {
    let opts: Options = if options.trim().is_empty() {
        Options::default()
    } else {
        serde_json::from_str(options).map_err(err)?
    };
    let mut data = read_returns(csv.as_bytes()).map_err(err)?;
    if opts.assets > 0 && opts.assets < data.n_assets() {
        data = data.select_assets(&(0..opts.assets).collect::<Vec<_>>());
    }
    if opts.periods > 0 && opts.periods < data.n_scenarios() {
        data = data
            .slice_rows(data.n_scenarios() - opts.periods, opts.periods)
            .map_err(err)?;
    }
    Ok((data, opts))
}

fn instance(data: ScenarioSet, o: &Options, theta: f64) -> Result<DrpInstance, String> {
    let profile = AversionProfile::new(o.phi, o.risk_aversion, theta, o.ref_point).map_err(err)?;
    if o.k == 0 || o.k > data.n_assets() {
        return Err(format!("k must be between 1 and {}", data.n_assets()));
    }
    DrpInstance::from_scenarios(data, profile, o.k).map_err(err)
}

fn tabu(o: &Options) -> TabuConfig {
    TabuConfig::default()
        .with_iterations(o.iters)
        .with_seed(o.seed)
}

#[derive(Serialize)]
struct Solution {
    assets: Vec<String>,
    weights: Vec<f64>,
    support: Vec<String>,
    objective: f64,
    lambda: f64,
    nu: Vec<f64>,
    evaluations: usize,
    trace: Vec<f64>,
}

/// Chooses `k` assets and their weights.
pub fn solve_json(csv: &str, options: &str) -> Result<String, String> {
    let (data, o) = parse(csv, options)?;
    let inst = instance(data, &o, o.theta)?;
    let res = run_search(&inst, o.algo, &tabu(&o), &PenaltyOptions::default()).map_err(err)?;
    let cert = dual_certificate(&inst, &res.best_selection.weights).map_err(err)?;
    let ids = inst.scenarios.asset_ids();
    let out = Solution {
        assets: ids.to_vec(),
        support: res
            .best_selection
            .selected()
            .iter()
            .map(|&j| ids[j].clone())
            .collect(),
        weights: res.best_selection.weights,
        objective: res.best_objective,
        lambda: cert.lambda,
        nu: cert.nu,
        evaluations: res.evaluations,
        trace: res.trace,
    };
    serde_json::to_string(&out).map_err(err)
}

/// Worst-case distribution for `weights` (JSON array, one per asset).
/// `split` selects two-point mass splitting; `d_cap <= 0` uses the default cap.
pub fn worst_case_json(
    csv: &str,
    options: &str,
    weights: &str,
    d_cap: f64,
    split: bool,
) -> Result<String, String> {
    let (data, mut o) = parse(csv, options)?;
    let x: Vec<f64> = serde_json::from_str(weights).map_err(err)?;
    if x.len() != data.n_assets() {
        return Err(format!(
            "{} weights for {} assets",
            x.len(),
            data.n_assets()
        ));
    }
    o.k = data.n_assets();
    let inst = instance(data, &o, o.theta)?;
    let cap = if d_cap > 0.0 {
        d_cap
    } else {
        default_cap(&inst)
    };
    let mode = if split {
        TransportMode::Split
    } else {
        TransportMode::Unsplit
    };
    let report = worst_case_report(&inst, &x, cap, mode).map_err(err)?;
    let nominal: Vec<f64> = inst.scenarios.portfolio_returns(&x);
    let shifted: Vec<(usize, f64, f64)> = report
        .distribution
        .points
        .iter()
        .zip(&report.distribution.masses)
        .zip(&report.distribution.origins)
        .map(|((p, &m), &i)| (i, m, p.iter().zip(&x).map(|(a, b)| a * b).sum()))
        .collect();
    serde_json::to_string(&json!({
        "report": report,
        "nominal_returns": nominal,
        "points": shifted.iter().map(|(i, m, r)| json!({"origin": i, "mass": m, "return": r})).collect::<Vec<_>>(),
    }))
    .map_err(err)
}

/// Re-solves at θ·1 .. θ·`steps` and reports the objective of each.
pub fn theta_sweep_json(csv: &str, options: &str, steps: usize) -> Result<String, String> {
    let (data, o) = parse(csv, options)?;
    if steps == 0 {
        return Err("steps must be positive".into());
    }
    let base = instance(data, &o, o.theta)?;
    let mut rows = Vec::with_capacity(steps);
    for m in 1..=steps {
        let theta = o.theta * m as f64;
        let inst = base
            .with_profile(base.profile.with_radius(theta))
            .map_err(err)?;
        let res = run_search(&inst, o.algo, &tabu(&o), &PenaltyOptions::default()).map_err(err)?;
        let ids = inst.scenarios.asset_ids();
        let support: Vec<&str> = res
            .best_selection
            .selected()
            .iter()
            .map(|&j| ids[j].as_str())
            .collect();
        rows.push(json!({"theta": theta, "objective": res.best_objective, "support": support}));
    }
    serde_json::to_string(&rows).map_err(err)
}

#[wasm_bindgen]
pub fn sample_csv() -> String {
    SAMPLE_CSV.to_string()
}

#[wasm_bindgen]
pub fn solve(csv: &str, options: &str) -> Result<String, JsError> {
    solve_json(csv, options).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn worst_case(
    csv: &str,
    options: &str,
    weights: &str,
    d_cap: f64,
    split: bool,
) -> Result<String, JsError> {
    worst_case_json(csv, options, weights, d_cap, split).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn theta_sweep(csv: &str, options: &str, steps: usize) -> Result<String, JsError> {
    theta_sweep_json(csv, options, steps).map_err(|e| JsError::new(&e))
}
