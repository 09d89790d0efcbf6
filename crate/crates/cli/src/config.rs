use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use drp_core::dynamics::InvestorType;
use drp_core::market_data::WindowPlan;
use drp_core::model::AversionProfile;
use drp_core::qp::PenaltyOptions;
use drp_core::search::{Algorithm, TabuConfig};
use drp_core::worst_case::TransportMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub phi: f64,
    pub risk_aversion: f64,
    pub theta: f64,
    pub ref_point: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        let p = AversionProfile::default();
        Self {
            phi: p.loss_aversion,
            risk_aversion: p.risk_aversion,
            theta: p.ambiguity_radius,
            ref_point: p.reference_point,
        }
    }
}

impl ProfileConfig {
    pub fn profile(&self) -> Result<AversionProfile> {
        AversionProfile::new(self.phi, self.risk_aversion, self.theta, self.ref_point)
            .map_err(|e| anyhow!("{e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Iteration budget; when absent tabu uses 2000 and hybrid 300.
    pub iters: Option<usize>,
    pub neighborhood: usize,
    pub tenure: usize,
    pub aspiration: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let t = TabuConfig::default();
        Self {
            iters: None,
            neighborhood: t.neighborhood_size,
            tenure: t.tabu_tenure,
            aspiration: t.aspiration,
        }
    }
}

pub const TABU_ITERS: usize = 2000;
pub const HYBRID_ITERS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub estimation: usize,
    pub holding: usize,
    pub step: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            estimation: 36,
            holding: 12,
            step: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub strategies: Vec<String>,
    pub investor: InvestorType,
    pub periods_per_year: f64,
    pub risk_free: f64,
    /// MVO risk aversion; defaults to the profile's.
    pub mvo_gamma: Option<f64>,
    /// DRP reference return: the profile's constant or the window's mean index return.
    pub reference: ReferenceChoice,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceChoice {
    #[default]
    Constant,
    /// Mean of the benchmark series (or the equal-weighted average) over the estimation window.
    Index,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            strategies: ["eq", "mv", "rp", "mvo", "drp"].map(String::from).to_vec(),
            investor: InvestorType::Type0,
            periods_per_year: 12.0,
            risk_free: 0.0,
            mvo_gamma: None,
            reference: ReferenceChoice::Constant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorstCaseConfig {
    /// Portfolio to analyse; when absent the configured search picks one.
    pub weights: Option<Vec<f64>>,
    pub d_cap: Option<f64>,
    pub mode: TransportMode,
}

impl Default for WorstCaseConfig {
    fn default() -> Self {
        Self {
            weights: None,
            d_cap: None,
            mode: TransportMode::Split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Rows use θ·1, θ·2, ..., θ·scales.
    pub scales: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { scales: 5 }
    }
}

/// Everything a run depends on. Loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub caps: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
    pub k: Option<usize>,
    pub algo: Algorithm,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub profile: ProfileConfig,
    pub search: SearchConfig,
    pub penalty: PenaltyOptions,
    pub window: WindowConfig,
    pub backtest: BacktestConfig,
    pub worstcase: WorstCaseConfig,
    pub bench: BenchConfig,
    /// Sensitivity grid: parameter name to values.
    pub grid: BTreeMap<String, Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            caps: None,
            benchmark: None,
            k: None,
            algo: Algorithm::Hybrid,
            seed: 0,
            threads: None,
            out: None,
            profile: ProfileConfig::default(),
            search: SearchConfig::default(),
            penalty: PenaltyOptions::default(),
            window: WindowConfig::default(),
            backtest: BacktestConfig::default(),
            worstcase: WorstCaseConfig::default(),
            bench: BenchConfig::default(),
            grid: BTreeMap::new(),
        }
    }
}

pub const GRID_KEYS: [&str; 4] = ["phi", "risk_aversion", "theta", "ref_point"];

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn iterations(&self, algo: Algorithm) -> usize {
        self.search.iters.unwrap_or(match algo {
            Algorithm::Hybrid => HYBRID_ITERS,
            _ => TABU_ITERS,
        })
    }

    pub fn tabu(&self, algo: Algorithm) -> TabuConfig {
        TabuConfig {
            neighborhood_size: self.search.neighborhood,
            tabu_tenure: self.search.tenure,
            max_iterations: self.iterations(algo),
            rng_seed: self.seed,
            aspiration: self.search.aspiration,
        }
    }

    pub fn plan(&self) -> Result<WindowPlan> {
        WindowPlan::new(
            self.window.estimation,
            self.window.holding,
            self.window.step,
        )
        .map_err(|e| anyhow!("invalid window plan: {e}"))
    }

    pub fn require_k(&self) -> Result<usize> {
        match self.k {
            Some(k) if k >= 1 => Ok(k),
            Some(_) => bail!("--k must be at least 1"),
            None => bail!("--k is required"),
        }
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| anyhow!("--data is required"))
    }

    /// Checks every setting that does not depend on the data.
    pub fn validate_common(&self) -> Result<()> {
        self.profile.profile()?;
        self.tabu(self.algo)
            .validate()
            .map_err(|e| anyhow!("{e}"))?;
        self.penalty
            .validate()
            .map_err(|e| anyhow!("invalid penalty settings: {e}"))?;
        if self.threads == Some(0) {
            bail!("--threads must be at least 1");
        }
        Ok(())
    }

    /// Profile points of the sensitivity grid, in lexicographic order over
    /// `GRID_KEYS` with the first key varying slowest.
    pub fn grid_points(&self) -> Result<Vec<ProfileConfig>> {
        if let Some(bad) = self.grid.keys().find(|k| !GRID_KEYS.contains(&k.as_str())) {
            bail!(
                "unknown grid parameter '{bad}' (expected one of {})",
                GRID_KEYS.join(", ")
            );
        }
        if self.grid.is_empty() || self.grid.values().any(Vec::is_empty) {
            bail!("the sensitivity grid needs at least one value per listed parameter");
        }
        let mut points = vec![self.profile];
        for key in GRID_KEYS {
            let Some(values) = self.grid.get(key) else {
                continue;
            };
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p;
                        match key {
                            "phi" => q.phi = v,
                            "risk_aversion" => q.risk_aversion = v,
                            "theta" => q.theta = v,
                            _ => q.ref_point = v,
                        }
                        q
                    })
                })
                .collect();
        }
        for p in &points {
            p.profile()?;
        }
        Ok(points)
    }
}

/// Parses `name=v1,v2,...`.
pub fn parse_grid(arg: &str) -> Result<(String, Vec<f64>)> {
    let (name, values) = arg
        .split_once('=')
        .ok_or_else(|| anyhow!("grid entry '{arg}' is not name=v1,v2,..."))?;
    let name = name.trim().replace('-', "_");
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("bad grid value '{v}' for {name}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((name, values))
}

pub fn parse_weights(arg: &str) -> Result<Vec<f64>> {
    arg.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("bad weight '{v}'"))
        })
        .collect()
}
