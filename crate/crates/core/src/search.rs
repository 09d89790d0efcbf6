//! Choosing which k assets to hold.
//!
//! Every search scores a support by solving its fixed-support subproblem.
//! [`enumerate_exact`] scores all C(N, k) supports. [`tabu_search`] and
//! [`hybrid_search`] share one tabu loop over single-swap neighborhoods and
//! differ only in the subproblem solver: the exact active-set method or the
//! penalty/barrier method.

use std::collections::{HashMap, VecDeque};

use itertools::Itertools;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{objective_value, DrpInstance, ModelError, PortfolioSelection};
use crate::qp::{assemble_for_support, penalty_solve, solve_qp, PenaltyOptions, QpError};
use crate::{par, rng};

/// Default cap on the number of subsets [`enumerate_exact`] will visit.
pub const DEFAULT_SUBSET_CAP: u64 = 200_000;

/// Name of the random stream driving neighbor generation.
pub const SEARCH_STREAM: &str = "search";

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("C({n}, {k}) = {count} subsets exceeds the cap of {cap}")]
    TooManySubsets {
        n: usize,
        k: usize,
        count: u64,
        cap: u64,
    },
    #[error("requested {requested} neighbors but only {available} single swaps exist")]
    NeighborhoodExhausted { requested: usize, available: usize },
    #[error("invalid search configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabuConfig {
    pub neighborhood_size: usize,
    pub tabu_tenure: usize,
    pub max_iterations: usize,
    pub rng_seed: u64,
    pub aspiration: bool,
}

impl Default for TabuConfig {
    fn default() -> Self {
        Self {
            neighborhood_size: 10,
            tabu_tenure: 50,
            max_iterations: 2000,
            rng_seed: 0,
            aspiration: true,
        }
    }
}

impl TabuConfig {
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.max_iterations = iterations;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.neighborhood_size == 0 {
            return Err(SearchError::InvalidConfig(
                "neighborhood size must be positive".into(),
            ));
        }
        if self.tabu_tenure == 0 {
            return Err(SearchError::InvalidConfig(
                "tabu tenure must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which support search to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Exact,
    Tabu,
    Hybrid,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Tabu => "tabu",
            Self::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(Self::Exact),
            "tabu" => Ok(Self::Tabu),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(format!(
                "unknown algorithm '{other}' (expected exact, tabu or hybrid)"
            )),
        }
    }
}

/// Runs `algorithm` with the given settings.
pub fn run_search(
    inst: &DrpInstance,
    algorithm: Algorithm,
    tabu: &TabuConfig,
    penalty: &PenaltyOptions,
) -> Result<SearchResult, SearchError> {
    match algorithm {
        Algorithm::Exact => enumerate_exact(inst),
        Algorithm::Tabu => tabu_search(inst, tabu),
        Algorithm::Hybrid => hybrid_search(inst, tabu, penalty),
    }
}

/// Score of one support: objective and the weights on the supported assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    pub weights: Vec<f64>,
    /// Largest KKT residual of the exact solve, when one was performed.
    pub kkt_residual: Option<f64>,
}

/// Scores a sorted support of the instance.
pub trait SubsetEvaluator: Sync {
    fn evaluate(&self, inst: &DrpInstance, support: &[usize]) -> Result<Evaluation, SearchError>;
}

impl<F> SubsetEvaluator for F
where
    F: Fn(&DrpInstance, &[usize]) -> Result<Evaluation, SearchError> + Sync,
{
    fn evaluate(&self, inst: &DrpInstance, support: &[usize]) -> Result<Evaluation, SearchError> {
        self(inst, support)
    }
}

/// Active-set solve certified to `tolerance`.
#[derive(Debug, Clone, Copy)]
pub struct ExactEvaluator {
    pub tolerance: f64,
}

impl Default for ExactEvaluator {
    fn default() -> Self {
        Self { tolerance: 1e-8 }
    }
}

impl SubsetEvaluator for ExactEvaluator {
    fn evaluate(&self, inst: &DrpInstance, support: &[usize]) -> Result<Evaluation, SearchError> {
        let sp = assemble_for_support(inst, support)?;
        let sol = solve_qp(&sp, self.tolerance)?;
        Ok(score(
            inst,
            support,
            &sol.z[..support.len()],
            Some(sol.report.max_residual()),
        ))
    }
}

/// Penalty/barrier solve, scored at the repaired feasible point.
#[derive(Debug, Clone, Copy, Default)]
pub struct PenaltyEvaluator {
    pub options: PenaltyOptions,
}

impl SubsetEvaluator for PenaltyEvaluator {
    fn evaluate(&self, inst: &DrpInstance, support: &[usize]) -> Result<Evaluation, SearchError> {
        let sp = assemble_for_support(inst, support)?;
        let out = penalty_solve(&sp, &self.options)?;
        Ok(score(inst, support, &out.repaired[..support.len()], None))
    }
}

/// Cleans solver weights onto the simplex and evaluates the closed form.
fn score(inst: &DrpInstance, support: &[usize], raw: &[f64], kkt: Option<f64>) -> Evaluation {
    let mut weights: Vec<f64> = raw.iter().map(|w| w.clamp(0.0, 1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut x = vec![0.0; inst.n_assets()];
    for (&j, &w) in support.iter().zip(&weights) {
        x[j] = w;
    }
    Evaluation {
        objective: objective_value(inst, &x),
        weights,
        kkt_residual: kkt,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_selection: PortfolioSelection,
    pub best_objective: f64,
    /// Best objective after each iteration; entry 0 is the starting point.
    pub trace: Vec<f64>,
    /// Number of subproblem solves (repeat visits are served from a cache).
    pub evaluations: usize,
    /// Support held after each iteration; entry 0 is the starting point.
    pub visited: Vec<Vec<usize>>,
    /// Largest KKT residual over all exact solves, if any were made.
    pub max_kkt_residual: Option<f64>,
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k) as u64;
    let mut c: u64 = 1;
    for i in 0..k {
        c = c.saturating_mul(n as u64 - i) / (i + 1);
    }
    c
}

fn selection(
    inst: &DrpInstance,
    support: &[usize],
    eval: &Evaluation,
) -> Result<PortfolioSelection, SearchError> {
    Ok(PortfolioSelection::from_subset(
        inst.n_assets(),
        support,
        &eval.weights,
    )?)
}

fn max_kkt(acc: Option<f64>, e: &Evaluation) -> Option<f64> {
    match (acc, e.kkt_residual) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

/// Scores every k-subset with the exact solver and returns the best one.
pub fn enumerate_exact(inst: &DrpInstance) -> Result<SearchResult, SearchError> {
    enumerate_with(inst, &ExactEvaluator::default(), DEFAULT_SUBSET_CAP)
}

/// Exhaustive search with a custom evaluator and subset cap. Ties go to the
/// lexicographically smallest support.
pub fn enumerate_with(
    inst: &DrpInstance,
    evaluator: &dyn SubsetEvaluator,
    cap: u64,
) -> Result<SearchResult, SearchError> {
    let n = inst.n_assets();
    let k = inst.cardinality;
    let count = binomial(n, k);
    if count > cap {
        return Err(SearchError::TooManySubsets { n, k, count, cap });
    }
    let subsets: Vec<Vec<usize>> = (0..n).combinations(k).collect();
    let evals = par::map(&subsets, |s| evaluator.evaluate(inst, s));
    let mut best: Option<(usize, Evaluation)> = None;
    let mut kkt = None;
    for (i, e) in evals.into_iter().enumerate() {
        let e = e?;
        kkt = max_kkt(kkt, &e);
        if best.as_ref().is_none_or(|(_, b)| e.objective > b.objective) {
            best = Some((i, e));
        }
    }
    let (i, e) = best.expect("at least one subset");
    Ok(SearchResult {
        best_selection: selection(inst, &subsets[i], &e)?,
        best_objective: e.objective,
        trace: vec![e.objective],
        evaluations: subsets.len(),
        visited: vec![subsets[i].clone()],
        max_kkt_residual: kkt,
    })
}

/// Number of distinct single swaps from a size-k support of N assets.
pub fn swap_count(n: usize, k: usize) -> usize {
    k * (n - k)
}

/// `n` distinct single-swap neighbors of the sorted support `current`,
/// drawn uniformly without replacement.
pub fn neighbor_supports<R: Rng>(
    current: &[usize],
    n_assets: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>, SearchError> {
    let k = current.len();
    let available = swap_count(n_assets, k);
    if n == 0 || n > available {
        return Err(SearchError::NeighborhoodExhausted {
            requested: n,
            available,
        });
    }
    let mut inside = vec![false; n_assets];
    current.iter().for_each(|&j| inside[j] = true);
    let outside: Vec<usize> = (0..n_assets).filter(|&j| !inside[j]).collect();
    let picks = index::sample(rng, available, n);
    Ok(picks
        .into_iter()
        .map(|p| {
            let (drop, add) = (p / outside.len(), outside[p % outside.len()]);
            let mut next: Vec<usize> = current.to_vec();
            next[drop] = add;
            next.sort_unstable();
            next
        })
        .collect())
}

/// Indicator-vector form of [`neighbor_supports`].
pub fn gen_neighbors<R: Rng>(
    y: &[bool],
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<bool>>, SearchError> {
    let current: Vec<usize> = y
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(j, _)| j)
        .collect();
    let supports = neighbor_supports(&current, y.len(), n, rng)?;
    Ok(supports
        .into_iter()
        .map(|s| {
            let mut v = vec![false; y.len()];
            s.into_iter().for_each(|j| v[j] = true);
            v
        })
        .collect())
}

/// The k assets with the highest sample mean, ties to the lower index.
pub fn initial_support(inst: &DrpInstance) -> Vec<usize> {
    let mu = inst.scenarios.mean_returns();
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| mu[b].total_cmp(&mu[a]).then(a.cmp(&b)));
    let mut chosen = order[..inst.cardinality].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Tabu search with exact subproblem solves.
pub fn tabu_search(inst: &DrpInstance, cfg: &TabuConfig) -> Result<SearchResult, SearchError> {
    tabu_with(inst, cfg, &ExactEvaluator::default())
}

/// Tabu search with penalty/barrier subproblem solves.
pub fn hybrid_search(
    inst: &DrpInstance,
    cfg: &TabuConfig,
    penalty: &PenaltyOptions,
) -> Result<SearchResult, SearchError> {
    penalty.validate()?;
    tabu_with(inst, cfg, &PenaltyEvaluator { options: *penalty })
}

/// The shared tabu loop.
///
/// Each iteration draws up to `neighborhood_size` swap neighbors of the
/// current support (fewer when the swap neighborhood is smaller) and moves
/// to the best admissible one even if it is worse than the current support.
/// A support is admissible when it is not tabu, or when aspiration is on and
/// it strictly beats the best objective found so far. Accepted supports stay
/// tabu for `tabu_tenure` iterations. When every neighbor is tabu the search
/// stays put for that iteration.
pub fn tabu_with(
    inst: &DrpInstance,
    cfg: &TabuConfig,
    evaluator: &dyn SubsetEvaluator,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let n_assets = inst.n_assets();
    let n_neighbors = cfg
        .neighborhood_size
        .min(swap_count(n_assets, inst.cardinality));
    let mut rng = rng::stream(cfg.rng_seed, SEARCH_STREAM);

    let mut cache: HashMap<Vec<usize>, Evaluation> = HashMap::new();
    let mut kkt = None;
    let mut current = initial_support(inst);
    let first = evaluator.evaluate(inst, &current)?;
    kkt = max_kkt(kkt, &first);
    cache.insert(current.clone(), first.clone());

    let mut best = (current.clone(), first);
    let mut tabu: VecDeque<(Vec<usize>, usize)> = VecDeque::new();
    tabu.push_back((current.clone(), cfg.tabu_tenure));
    let mut trace = vec![best.1.objective];
    let mut visited = vec![current.clone()];

    for iter in 1..=cfg.max_iterations {
        while tabu.front().is_some_and(|(_, until)| *until < iter) {
            tabu.pop_front();
        }
        if n_neighbors > 0 {
            let neighbors = neighbor_supports(&current, n_assets, n_neighbors, &mut rng)?;
            let fresh: Vec<Vec<usize>> = neighbors
                .iter()
                .filter(|s| !cache.contains_key(*s))
                .cloned()
                .unique()
                .collect();
            let evals = par::map(&fresh, |s| evaluator.evaluate(inst, s));
            for (s, e) in fresh.into_iter().zip(evals) {
                let e = e?;
                kkt = max_kkt(kkt, &e);
                cache.insert(s, e);
            }

            let mut choice: Option<(&Vec<usize>, f64)> = None;
            for s in &neighbors {
                let obj = cache[s].objective;
                let is_tabu = tabu.iter().any(|(t, _)| t == s);
                let admissible = !is_tabu || (cfg.aspiration && obj > best.1.objective);
                if !admissible {
                    continue;
                }
                let better = match choice {
                    None => true,
                    Some((c, o)) => obj > o || (obj == o && s < c),
                };
                if better {
                    choice = Some((s, obj));
                }
            }
            if let Some((s, obj)) = choice {
                current = s.clone();
                tabu.retain(|(t, _)| *t != current);
                tabu.push_back((current.clone(), iter + cfg.tabu_tenure));
                if obj > best.1.objective {
                    best = (current.clone(), cache[&current].clone());
                }
            }
        }
        trace.push(best.1.objective);
        visited.push(current.clone());
    }

    Ok(SearchResult {
        best_selection: selection(inst, &best.0, &best.1)?,
        best_objective: best.1.objective,
        trace,
        evaluations: cache.len(),
        visited,
        max_kkt_residual: kkt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::ScenarioSet;
    use crate::model::{evaluate_objective, AversionProfile};
    use crate::synthetic::random_instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    #[test]
    fn three_of_three_has_one_subset() {
        let inst = random_instance(1, 3, 12, 3);
        let r = enumerate_exact(&inst).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.best_selection.selected(), vec![0, 1, 2]);
    }

    #[test]
    fn two_of_four_has_six_subsets() {
        let inst = random_instance(2, 4, 12, 2);
        assert_eq!(enumerate_exact(&inst).unwrap().evaluations, 6);
    }

    #[test]
    fn single_asset_picks_highest_mean() {
        let rows = vec![
            vec![0.01, 0.03, -0.01],
            vec![0.02, 0.00, 0.05],
            vec![0.00, 0.01, 0.02],
        ];
        let s = ScenarioSet::from_rows(&rows).unwrap();
        let p = AversionProfile::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let inst = DrpInstance::from_scenarios(s, p, 1)
            .unwrap()
            .without_covariance();
        let r = enumerate_exact(&inst).unwrap();
        assert_eq!(r.best_selection.selected(), vec![2]);
        assert!((r.best_objective - 0.02).abs() < 1e-12);
    }

    #[test]
    fn subset_cap_is_enforced() {
        let inst = random_instance(3, 10, 12, 5);
        assert!(matches!(
            enumerate_with(&inst, &ExactEvaluator::default(), 100),
            Err(SearchError::TooManySubsets { count: 252, .. })
        ));
    }

    #[test]
    fn all_swaps_of_a_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got: BTreeSet<Vec<bool>> = gen_neighbors(&[true, false, false], 2, &mut rng)
            .unwrap()
            .into_iter()
            .collect();
        let want: BTreeSet<Vec<bool>> = [vec![false, true, false], vec![false, false, true]]
            .into_iter()
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn full_neighborhood_set_is_seed_independent() {
        let y = [true, false, true, false, false];
        let collect = |seed| -> BTreeSet<Vec<bool>> {
            gen_neighbors(&y, 6, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
                .into_iter()
                .collect()
        };
        assert_eq!(collect(1), collect(2));
        assert_eq!(collect(1).len(), 6);
    }

    #[test]
    fn no_swaps_when_everything_is_held() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            gen_neighbors(&[true, true], 1, &mut rng),
            Err(SearchError::NeighborhoodExhausted { available: 0, .. })
        ));
    }

    #[test]
    fn zero_iterations_returns_initial_support() {
        let inst = random_instance(4, 6, 12, 2);
        let r = tabu_search(&inst, &TabuConfig::default().with_iterations(0)).unwrap();
        assert_eq!(r.best_selection.selected(), initial_support(&inst));
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn same_seed_same_trace() {
        let inst = random_instance(5, 8, 12, 3);
        let cfg = TabuConfig::default().with_iterations(40).with_seed(9);
        let a = tabu_search(&inst, &cfg).unwrap();
        let b = tabu_search(&inst, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.visited, b.visited);
    }

    #[test]
    fn trace_is_monotone_and_matches_selection() {
        let inst = random_instance(6, 9, 15, 3);
        let r = tabu_search(&inst, &TabuConfig::default().with_iterations(60)).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
        let f = evaluate_objective(&inst, &r.best_selection).unwrap();
        assert!((f - r.best_objective).abs() < 1e-9);
        assert!(r.visited.iter().all(|s| s.len() == 3));
    }

    #[test]
    fn hybrid_with_exact_inner_solves_follows_tabu() {
        let inst = random_instance(7, 8, 12, 2);
        let cfg = TabuConfig::default().with_iterations(30).with_seed(3);
        let a = tabu_search(&inst, &cfg).unwrap();
        let b = tabu_with(&inst, &cfg, &ExactEvaluator::default()).unwrap();
        assert_eq!(a.visited, b.visited);
    }

    #[test]
    fn heuristics_never_beat_enumeration() {
        let inst = random_instance(8, 7, 12, 2);
        let exact = enumerate_exact(&inst).unwrap();
        let t = tabu_search(&inst, &TabuConfig::default().with_iterations(50)).unwrap();
        let h = hybrid_search(
            &inst,
            &TabuConfig::default().with_iterations(20),
            &PenaltyOptions::default(),
        )
        .unwrap();
        assert!(t.best_objective <= exact.best_objective + 1e-9);
        assert!(h.best_objective <= exact.best_objective + 1e-9);
        assert!((t.best_objective - exact.best_objective).abs() < 1e-6);
    }
}
