//! `drp`: solve, analyse and backtest distributionally robust portfolios.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drp_core::dynamics::InvestorType;
use drp_core::search::Algorithm;
use drp_core::synthetic::MarketModel;
use drp_core::worst_case::TransportMode;

use config::{parse_grid, parse_weights, ReferenceChoice, RunConfig};
use failure::{Failure, ResultExt};

#[derive(Parser)]
#[command(
    name = "drp",
    version,
    about = "Distributionally robust portfolio selection under loss and risk aversion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select k assets and their weights.
    Solve(Common),
    /// Solve over a grid of aversion parameters and write CSV.
    Sensitivity(SensitivityArgs),
    /// Compare exact, tabu and hybrid search as θ grows.
    Bench(BenchArgs),
    /// Rolling-window backtest of DRP against the baseline strategies.
    Backtest(BacktestArgs),
    /// Worst-case distribution for a portfolio and its duality gap.
    Worstcase(WorstCaseArgs),
    /// Write a seeded synthetic market (returns, caps and index).
    Synth(SynthArgs),
}

/// Flags shared by every solving command. Flags override the config file.
#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Wide CSV of returns: `date,<asset>,...`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Market caps as `asset,cap` rows.
    #[arg(long)]
    caps: Option<PathBuf>,
    /// Benchmark return series `date,<name>`; defaults to the equal-weighted average.
    #[arg(long)]
    benchmark: Option<PathBuf>,
    /// Number of assets to hold.
    #[arg(long)]
    k: Option<usize>,
    /// Loss aversion φ.
    #[arg(long, allow_negative_numbers = true)]
    phi: Option<f64>,
    /// Risk aversion 𝒜.
    #[arg(long, allow_negative_numbers = true)]
    risk_aversion: Option<f64>,
    /// Wasserstein radius θ.
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    /// Reference return R̂.
    #[arg(long, allow_negative_numbers = true)]
    ref_point: Option<f64>,
    /// exact, tabu or hybrid.
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Search iterations (tabu default 2000, hybrid 300).
    #[arg(long)]
    iters: Option<usize>,
    /// Neighbors generated per iteration.
    #[arg(long)]
    neighborhood: Option<usize>,
    /// Iterations a visited support stays tabu.
    #[arg(long)]
    tenure: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; without it the main report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    common: Common,
    /// Grid axis as `name=v1,v2,...` with name in phi, risk-aversion, theta, ref-point. Repeatable.
    #[arg(long = "grid")]
    grid: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Number of θ multiples (rows θ·1 .. θ·scales).
    #[arg(long)]
    scales: Option<usize>,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated subset of eq, mv, rp, mvo, drp.
    #[arg(long)]
    strategies: Option<String>,
    /// Dynamic loss aversion for DRP: type0, type1 or type2.
    #[arg(long)]
    investor: Option<InvestorType>,
    /// Estimation window length in periods.
    #[arg(long)]
    estimation: Option<usize>,
    /// Holding window length in periods.
    #[arg(long)]
    holding: Option<usize>,
    /// Periods between rebalances.
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    periods_per_year: Option<f64>,
    /// Annualized risk-free rate.
    #[arg(long, allow_negative_numbers = true)]
    risk_free: Option<f64>,
    /// MVO risk aversion (defaults to --risk-aversion).
    #[arg(long)]
    mvo_gamma: Option<f64>,
    /// DRP reference return: constant (--ref-point) or index (window mean of --benchmark).
    #[arg(long, value_enum)]
    reference: Option<ReferenceChoice>,
}

#[derive(Args)]
struct WorstCaseArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated weights, one per asset; when absent the portfolio is solved first.
    #[arg(long)]
    weights: Option<String>,
    /// Largest transport distance of a single point.
    #[arg(long)]
    d_cap: Option<f64>,
    /// split or unsplit.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TransportMode>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    assets: usize,
    #[arg(long, default_value_t = 120)]
    periods: usize,
    /// Directory for synthetic_<assets>{,_caps,_index}.csv.
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<TransportMode, String> {
    match s {
        "split" => Ok(TransportMode::Split),
        "unsplit" => Ok(TransportMode::Unsplit),
        other => Err(format!(
            "unknown mode '{other}' (expected split or unsplit)"
        )),
    }
}

fn resolve(c: Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::from_file(path).config()?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr => $($field:tt)+) => {
            if let Some(v) = $flag {
                cfg.$($field)+ = v;
            }
        };
    }
    set!(c.data.map(Some) => data);
    set!(c.caps.map(Some) => caps);
    set!(c.benchmark.map(Some) => benchmark);
    set!(c.k.map(Some) => k);
    set!(c.phi => profile.phi);
    set!(c.risk_aversion => profile.risk_aversion);
    set!(c.theta => profile.theta);
    set!(c.ref_point => profile.ref_point);
    set!(c.algo => algo);
    set!(c.iters.map(Some) => search.iters);
    set!(c.neighborhood => search.neighborhood);
    set!(c.tenure => search.tenure);
    set!(c.seed => seed);
    set!(c.threads.map(Some) => threads);
    set!(c.out.map(Some) => out);
    Ok(cfg)
}

type CommandFn = fn(&RunConfig) -> Result<(), Failure>;

fn run(cli: Cli) -> Result<(), Failure> {
    let (cfg, command): (RunConfig, CommandFn) = match cli.command {
        Command::Synth(a) => {
            let model = MarketModel {
                n_assets: a.assets,
                n_periods: a.periods,
                ..MarketModel::default()
            };
            return commands::synth(a.seed, &model, &a.out);
        }
        Command::Solve(c) => (resolve(c)?, commands::solve),
        Command::Sensitivity(a) => {
            let mut cfg = resolve(a.common)?;
            for g in &a.grid {
                let (name, values) = parse_grid(g).config()?;
                cfg.grid.insert(name, values);
            }
            (cfg, commands::sensitivity)
        }
        Command::Bench(a) => {
            let mut cfg = resolve(a.common)?;
            if let Some(s) = a.scales {
                cfg.bench.scales = s;
            }
            (cfg, commands::bench)
        }
        Command::Backtest(a) => {
            let mut cfg = resolve(a.common)?;
            if let Some(s) = a.strategies {
                cfg.backtest.strategies = s
                    .split(',')
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect();
            }
            let b = &mut cfg.backtest;
            b.investor = a.investor.unwrap_or(b.investor);
            b.periods_per_year = a.periods_per_year.unwrap_or(b.periods_per_year);
            b.risk_free = a.risk_free.unwrap_or(b.risk_free);
            b.mvo_gamma = a.mvo_gamma.or(b.mvo_gamma);
            b.reference = a.reference.unwrap_or(b.reference);
            let w = &mut cfg.window;
            w.estimation = a.estimation.unwrap_or(w.estimation);
            w.holding = a.holding.unwrap_or(w.holding);
            w.step = a.step.unwrap_or(w.step);
            (cfg, commands::backtest)
        }
        Command::Worstcase(a) => {
            let mut cfg = resolve(a.common)?;
            if let Some(w) = a.weights {
                cfg.worstcase.weights = Some(parse_weights(&w).config()?);
            }
            cfg.worstcase.d_cap = a.d_cap.or(cfg.worstcase.d_cap);
            cfg.worstcase.mode = a.mode.unwrap_or(cfg.worstcase.mode);
            (cfg, commands::worstcase)
        }
    };
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Failure::Config(anyhow::anyhow!(
                "--threads must be at least 1"
            )));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .solve()?;
    }
    command(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("drp: {}", f.describe());
            f.exit_code()
        }
    }
}
