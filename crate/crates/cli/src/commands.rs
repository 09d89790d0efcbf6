use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail};
use drp_core::backtest::{
    benchmark_from_series, metrics_table, run_backtest, AversionAudit, DrpSettings, IndexSeries,
    MetricsTable, ReferenceRule, Strategy,
};
use drp_core::dynamics::{InvestorState, InvestorType};
use drp_core::market_data::{
    load_returns, read_caps, read_series, write_caps, write_returns, write_series, ScenarioSet,
};
use drp_core::model::{dual_certificate, DrpInstance, PortfolioSelection};
use drp_core::search::{
    enumerate_exact, hybrid_search, run_search, tabu_search, Algorithm, SearchError, SearchResult,
};
use drp_core::synthetic::{synthetic_market, MarketModel};
use drp_core::worst_case::{default_cap, worst_case_report, WorstCaseReport};
use serde::Serialize;

use crate::config::{ReferenceChoice, RunConfig};
use crate::failure::{Failure, ResultExt};

type Outcome = Result<(), Failure>;

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::Data(anyhow!("cannot open {}: {e}", path.display())))
}

fn load(cfg: &RunConfig) -> Result<ScenarioSet, Failure> {
    let path = cfg.require_data().config()?;
    load_returns(path).data()
}

fn instance(cfg: &RunConfig, data: ScenarioSet, k: usize) -> Result<DrpInstance, Failure> {
    if k > data.n_assets() {
        return Err(Failure::Config(anyhow!(
            "--k {k} exceeds the {} assets in the data",
            data.n_assets()
        )));
    }
    let profile = cfg.profile.profile().config()?;
    DrpInstance::from_scenarios(data, profile, k).data()
}

fn search(cfg: &RunConfig, inst: &DrpInstance) -> Result<SearchResult, Failure> {
    run_search(inst, cfg.algo, &cfg.tabu(cfg.algo), &cfg.penalty).map_err(search_failure)
}

fn search_failure(e: SearchError) -> Failure {
    match e {
        SearchError::TooManySubsets { .. }
        | SearchError::InvalidConfig(_)
        | SearchError::NeighborhoodExhausted { .. } => Failure::Config(e.into()),
        _ => Failure::Solve(e.into()),
    }
}

/// Writes `text` to `out/name`, or to stdout when no output directory is set.
fn emit(cfg: &RunConfig, name: &str, text: &str) -> Outcome {
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).data()?;
            std::fs::write(dir.join(name), text).data()
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.into()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct Certificate {
    lambda: f64,
    nu: Vec<f64>,
}

#[derive(Serialize)]
struct SolveReport<'a> {
    config: &'a RunConfig,
    algorithm: Algorithm,
    assets: &'a [String],
    weights: Vec<f64>,
    support: Vec<String>,
    objective: f64,
    certificate: Certificate,
    evaluations: usize,
    max_kkt_residual: Option<f64>,
    elapsed_ms: f64,
}

pub fn solve(cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    cfg.validate_common().config()?;
    let k = cfg.require_k().config()?;
    let data = load(cfg)?;
    let inst = instance(cfg, data, k)?;
    let res = search(cfg, &inst)?;
    let cert = dual_certificate(&inst, &res.best_selection.weights).solve()?;
    let ids = inst.scenarios.asset_ids();
    let report = SolveReport {
        config: cfg,
        algorithm: cfg.algo,
        assets: ids,
        support: res
            .best_selection
            .selected()
            .iter()
            .map(|&j| ids[j].clone())
            .collect(),
        weights: res.best_selection.weights.clone(),
        objective: res.best_objective,
        certificate: Certificate {
            lambda: cert.lambda,
            nu: cert.nu,
        },
        evaluations: res.evaluations,
        max_kkt_residual: res.max_kkt_residual,
        elapsed_ms: elapsed_ms(start),
    };
    emit(cfg, "solve.json", &json(&report)?)
}

pub fn sensitivity(cfg: &RunConfig) -> Outcome {
    cfg.validate_common().config()?;
    let k = cfg.require_k().config()?;
    let points = cfg.grid_points().config()?;
    let data = load(cfg)?;
    let inst = instance(cfg, data, k)?;
    let ids = inst.scenarios.asset_ids().to_vec();

    let config = serde_json::to_string(cfg).map_err(|e| Failure::Data(e.into()))?;
    let mut out =
        format!("# config: {config}\nphi,risk_aversion,theta,ref_point,objective,support,error\n");
    for p in points {
        let row = p
            .profile()
            .and_then(|profile| inst.with_profile(profile).map_err(anyhow::Error::from))
            .and_then(|point| {
                Ok(run_search(
                    &point,
                    cfg.algo,
                    &cfg.tabu(cfg.algo),
                    &cfg.penalty,
                )?)
            });
        let (objective, support, error) = match row {
            Ok(r) => {
                let support: Vec<&str> = r
                    .best_selection
                    .selected()
                    .iter()
                    .map(|&j| ids[j].as_str())
                    .collect();
                (
                    r.best_objective.to_string(),
                    support.join(" "),
                    String::new(),
                )
            }
            Err(e) => (
                String::new(),
                String::new(),
                e.to_string().replace([',', '\n'], ";"),
            ),
        };
        writeln!(
            out,
            "{},{},{},{},{objective},{support},{error}",
            p.phi, p.risk_aversion, p.theta, p.ref_point
        )
        .expect("writing to a String");
    }
    emit(cfg, "sensitivity.csv", &out)
}

#[derive(Serialize)]
struct BenchCell {
    objective: f64,
    evaluations: usize,
    /// Shortfall against exact enumeration; absent without an exact column.
    gap: Option<f64>,
    elapsed_ms: f64,
}

#[derive(Serialize)]
struct BenchRow {
    scale: usize,
    theta: f64,
    exact: Option<BenchCell>,
    tabu: BenchCell,
    hybrid: BenchCell,
}

#[derive(Serialize)]
struct BenchReport<'a> {
    config: &'a RunConfig,
    tabu_iterations: usize,
    hybrid_iterations: usize,
    notice: Option<String>,
    rows: Vec<BenchRow>,
}

pub fn bench(cfg: &RunConfig) -> Outcome {
    cfg.validate_common().config()?;
    let k = cfg.require_k().config()?;
    if cfg.bench.scales == 0 {
        return Err(Failure::Config(anyhow!("--scales must be at least 1")));
    }
    let data = load(cfg)?;
    let base = instance(cfg, data, k)?;
    let tabu_cfg = cfg.tabu(Algorithm::Tabu);
    let hybrid_cfg = cfg.tabu(Algorithm::Hybrid);

    let mut notice = None;
    let mut rows = Vec::new();
    for scale in 1..=cfg.bench.scales {
        let theta = cfg.profile.theta * scale as f64;
        let mut profile = cfg.profile;
        profile.theta = theta;
        let inst = base.with_profile(profile.profile().config()?).config()?;

        let timed = |f: &dyn Fn() -> Result<SearchResult, SearchError>| {
            let t = Instant::now();
            f().map(|r| (r, elapsed_ms(t)))
        };
        let exact = match timed(&|| enumerate_exact(&inst)) {
            Ok(r) => Some(r),
            Err(e @ SearchError::TooManySubsets { .. }) => {
                notice = Some(format!("exact column disabled: {e}"));
                None
            }
            Err(e) => return Err(search_failure(e)),
        };
        let tabu = timed(&|| tabu_search(&inst, &tabu_cfg)).map_err(search_failure)?;
        let hybrid =
            timed(&|| hybrid_search(&inst, &hybrid_cfg, &cfg.penalty)).map_err(search_failure)?;
        let best = exact.as_ref().map(|(r, _)| r.best_objective);
        let cell = |(r, ms): (SearchResult, f64)| BenchCell {
            objective: r.best_objective,
            evaluations: r.evaluations,
            gap: best.map(|b| b - r.best_objective),
            elapsed_ms: ms,
        };
        rows.push(BenchRow {
            scale,
            theta,
            exact: exact.map(cell),
            tabu: cell(tabu),
            hybrid: cell(hybrid),
        });
    }
    let report = BenchReport {
        config: cfg,
        tabu_iterations: tabu_cfg.max_iterations,
        hybrid_iterations: hybrid_cfg.max_iterations,
        notice,
        rows,
    };
    emit(cfg, "bench.json", &json(&report)?)
}

fn parse_strategy(
    name: &str,
    cfg: &RunConfig,
    caps: Option<&[f64]>,
    index: Option<&IndexSeries>,
) -> anyhow::Result<Strategy> {
    Ok(match name.to_ascii_lowercase().as_str() {
        "eq" | "equal" | "equal_weight" => Strategy::EqualWeight,
        "mv" | "market_value" | "market_value_weight" => Strategy::MarketValueWeight {
            caps: caps.map(<[f64]>::to_vec).unwrap_or_default(),
        },
        "rp" | "risk_parity" => Strategy::RiskParity,
        "mvo" | "markowitz" => Strategy::MarkowitzMvo {
            gamma: cfg.backtest.mvo_gamma.unwrap_or(cfg.profile.risk_aversion),
        },
        "drp" => Strategy::Drp(DrpSettings {
            profile: cfg.profile.profile()?,
            cardinality: cfg.require_k()?,
            algorithm: cfg.algo,
            tabu: cfg.tabu(cfg.algo),
            penalty: cfg.penalty,
            reference: match cfg.backtest.reference {
                ReferenceChoice::Constant => ReferenceRule::Constant,
                ReferenceChoice::Index => ReferenceRule::IndexMean {
                    series: index.cloned(),
                },
            },
        }),
        other => bail!("unknown strategy '{other}' (expected eq, mv, rp, mvo or drp)"),
    })
}

#[derive(Serialize)]
struct BacktestReport<'a> {
    config: &'a RunConfig,
    /// `equal_weighted` or the benchmark file.
    benchmark: String,
    table: MetricsTable,
    rebalance_dates: Vec<String>,
    allocations: Vec<(String, Vec<Vec<f64>>)>,
    audit: Vec<AversionAudit>,
    elapsed_ms: f64,
}

pub fn backtest(cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    cfg.validate_common().config()?;
    let plan = cfg.plan().config()?;
    if cfg.backtest.strategies.is_empty() {
        return Err(Failure::Config(anyhow!("no strategies selected")));
    }
    // Parse once without data so naming and profile errors fail fast.
    for name in &cfg.backtest.strategies {
        parse_strategy(name, cfg, None, None).config()?;
    }
    let wants = |tag: &str| {
        cfg.backtest
            .strategies
            .iter()
            .any(|s| parse_strategy(s, cfg, None, None).is_ok_and(|p| p.label() == tag))
    };
    if wants("MV") && cfg.caps.is_none() {
        return Err(Failure::Config(anyhow!("the mv strategy needs --caps")));
    }
    if !(cfg.backtest.periods_per_year > 0.0) {
        return Err(Failure::Config(anyhow!(
            "periods per year must be positive"
        )));
    }
    if cfg.backtest.reference == ReferenceChoice::Index
        && matches!(
            cfg.backtest.investor,
            InvestorType::Type1 | InvestorType::Type2
        )
    {
        return Err(Failure::Config(anyhow!(
            "an index reference cannot be combined with a dynamic investor, which sets its own reference"
        )));
    }
    let investor = if wants("DRP") {
        match InvestorState::new(
            cfg.backtest.investor,
            cfg.profile.phi,
            cfg.profile.ref_point,
        ) {
            Ok(s) => Some(s),
            Err(_) if cfg.backtest.investor == InvestorType::Type0 => None,
            Err(e) => return Err(Failure::Config(anyhow!("dynamic investor: {e}"))),
        }
    } else {
        None
    };

    let data = load(cfg)?;
    let caps = match &cfg.caps {
        Some(p) => Some(read_caps(open(p)?, data.asset_ids()).data()?),
        None => None,
    };
    let index = match &cfg.benchmark {
        Some(p) => {
            let (labels, values) = read_series(open(p)?).data()?;
            Some(IndexSeries { labels, values })
        }
        None => None,
    };
    let strategies = cfg
        .backtest
        .strategies
        .iter()
        .map(|s| parse_strategy(s, cfg, caps.as_deref(), index.as_ref()))
        .collect::<anyhow::Result<Vec<_>>>()
        .config()?;

    let out = run_backtest(&data, &plan, &strategies, investor).solve()?;
    let (bench, source) = match (&cfg.benchmark, &index) {
        (Some(p), Some(s)) => (
            benchmark_from_series(&out, &s.labels, &s.values).data()?,
            p.display().to_string(),
        ),
        _ => (out.benchmark.clone(), "equal_weighted".to_string()),
    };
    let table = metrics_table(
        &out,
        &bench,
        cfg.backtest.risk_free,
        cfg.backtest.periods_per_year,
    )
    .solve()?;

    let step = plan.step;
    let rebalance_dates = (0..out.runs[0].allocations.len())
        .map(|w| bench.timestamps[w * step].clone())
        .collect();
    let report = BacktestReport {
        config: cfg,
        benchmark: source,
        table,
        rebalance_dates,
        allocations: out
            .runs
            .iter()
            .map(|r| (r.label.clone(), r.allocations.clone()))
            .collect(),
        audit: out.audit.clone(),
        elapsed_ms: elapsed_ms(start),
    };
    if cfg.out.is_some() {
        for run in &out.runs {
            emit(
                cfg,
                &format!("wealth_{}.csv", run.label.to_ascii_lowercase()),
                &run.path.to_csv(),
            )?;
        }
        emit(cfg, "wealth_benchmark.csv", &bench.to_csv())?;
    }
    emit(cfg, "backtest.json", &json(&report)?)
}

#[derive(Serialize)]
struct WorstCaseOutput<'a> {
    config: &'a RunConfig,
    assets: &'a [String],
    weights: Vec<f64>,
    report: WorstCaseReport,
    elapsed_ms: f64,
}

pub fn worstcase(cfg: &RunConfig) -> Outcome {
    let start = Instant::now();
    cfg.validate_common().config()?;
    let given = cfg.worstcase.weights.clone();
    if given.is_none() {
        cfg.require_k().config()?;
    }
    if let Some(d) = cfg.worstcase.d_cap {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Failure::Config(anyhow!("--d-cap must be positive")));
        }
    }
    let data = load(cfg)?;
    let n = data.n_assets();
    let (inst, weights) = match given {
        Some(w) => {
            if w.len() != n {
                return Err(Failure::Config(anyhow!(
                    "{} weights given for {n} assets",
                    w.len()
                )));
            }
            PortfolioSelection::full(w.clone()).config()?;
            (instance(cfg, data, n)?, w)
        }
        None => {
            let inst = instance(cfg, data, cfg.require_k().config()?)?;
            let w = search(cfg, &inst)?.best_selection.weights;
            (inst, w)
        }
    };
    let d_cap = cfg.worstcase.d_cap.unwrap_or_else(|| default_cap(&inst));
    let report = worst_case_report(&inst, &weights, d_cap, cfg.worstcase.mode).solve()?;
    let output = WorstCaseOutput {
        config: cfg,
        assets: inst.scenarios.asset_ids(),
        weights,
        report,
        elapsed_ms: elapsed_ms(start),
    };
    emit(cfg, "worstcase.json", &json(&output)?)
}

pub fn synth(seed: u64, model: &MarketModel, dir: &Path) -> Outcome {
    if model.n_assets == 0 || model.n_periods < 2 {
        return Err(Failure::Config(anyhow!(
            "need at least 1 asset and 2 periods"
        )));
    }
    let m = synthetic_market(seed, model);
    std::fs::create_dir_all(dir).data()?;
    let stem = format!("synthetic_{}", model.n_assets);
    let create = |suffix: &str| File::create(dir.join(format!("{stem}{suffix}.csv"))).data();
    write_returns(&m.returns, create("")?).data()?;
    write_caps(m.returns.asset_ids(), &m.caps, create("_caps")?).data()?;
    write_series("index", m.returns.period_ids(), &m.index, create("_index")?).data()
}
