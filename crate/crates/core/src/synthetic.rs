//! Seeded synthetic markets for tests, benchmarks and the bundled dataset.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::market_data::ScenarioSet;
use crate::model::{AversionProfile, DrpInstance};
use crate::rng;

/// Independent normal returns with per-asset means in [−0.01, 0.02] and
/// volatilities in [0.02, 0.08].
pub fn random_scenarios(seed: u64, n_assets: usize, n_scenarios: usize) -> ScenarioSet {
    let mut rng = rng::stream(seed, "scenarios");
    let means: Vec<f64> = (0..n_assets).map(|_| rng.gen_range(-0.01..0.02)).collect();
    let vols: Vec<f64> = (0..n_assets).map(|_| rng.gen_range(0.02..0.08)).collect();
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let m = DMatrix::from_fn(n_scenarios, n_assets, |_, j| {
        means[j] + vols[j] * z.sample(&mut rng)
    });
    ScenarioSet::new(
        m,
        (1..=n_assets).map(|j| format!("A{j}")).collect(),
        (1..=n_scenarios).map(|i| i.to_string()).collect(),
    )
    .expect("generated data is finite")
}

/// [`random_scenarios`] with the sample covariance and the default profile.
pub fn random_instance(seed: u64, n_assets: usize, n_scenarios: usize, k: usize) -> DrpInstance {
    DrpInstance::from_scenarios(
        random_scenarios(seed, n_assets, n_scenarios),
        AversionProfile::default(),
        k,
    )
    .expect("valid synthetic instance")
}

/// Parameters of the one-factor monthly market model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub n_assets: usize,
    pub n_periods: usize,
    pub factor_mean: f64,
    pub factor_vol: f64,
}

impl Default for MarketModel {
    fn default() -> Self {
        Self {
            n_assets: 20,
            n_periods: 120,
            factor_mean: 0.007,
            factor_vol: 0.045,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub returns: ScenarioSet,
    /// Market capitalization of each asset at the start of the sample.
    pub caps: Vec<f64>,
    /// Capitalization-weighted index return per period.
    pub index: Vec<f64>,
}

/// One-factor market: `rᵢₜ = αᵢ + βᵢ fₜ + εᵢₜ` with monthly dates.
pub fn synthetic_market(seed: u64, model: &MarketModel) -> SyntheticMarket {
    let mut rng = rng::stream(seed, "market");
    let n = model.n_assets;
    let alpha: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.002..0.004)).collect();
    let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let idio: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.07)).collect();
    let caps: Vec<f64> = {
        let size = Uniform::new(0.0, 3.0);
        (0..n)
            .map(|_| (10f64).powf(size.sample(&mut rng)).round())
            .collect()
    };
    let f = Normal::new(model.factor_mean, model.factor_vol).expect("valid factor");
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let mut m = DMatrix::zeros(model.n_periods, n);
    for t in 0..model.n_periods {
        let ft = f.sample(&mut rng);
        for j in 0..n {
            // Rounded to basis-point hundredths so the CSV is short and exact.
            let r = alpha[j] + beta[j] * ft + idio[j] * z.sample(&mut rng);
            m[(t, j)] = (r.max(-0.95) * 1e6).round() / 1e6;
        }
    }
    let total: f64 = caps.iter().sum();
    let index = (0..model.n_periods)
        .map(|t| (0..n).map(|j| caps[j] / total * m[(t, j)]).sum())
        .collect();
    let periods = (0..model.n_periods)
        .map(|t| format!("{:04}-{:02}", 2000 + t / 12, t % 12 + 1))
        .collect();
    let ids = (1..=n).map(|j| format!("S{j:02}")).collect();
    SyntheticMarket {
        returns: ScenarioSet::new(m, ids, periods).expect("generated data is finite"),
        caps,
        index,
    }
}
