//! The distribution inside the Wasserstein ball that minimizes expected
//! utility for fixed weights.
//!
//! With a long-only portfolio, moving a scenario a distance `d` along
//! `−e_{j*}` (`j*` the largest weight) lowers its portfolio return by
//! `x_{j*}·d`, the largest drop any unit of l1 transport can buy. The loss
//! `gᵢ(d) = h(rᵢ) − h(rᵢ − x_{j*}d)` is convex in `d`, so for a given budget
//! the best use of scenario `i` is to move part of its mass all the way to
//! the cap `d_cap`. Filling scenarios in order of `gᵢ(d_cap)/d_cap` is then
//! a fractional knapsack, which solves the transport LP exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{dual_certificate, utility_of_return, DrpInstance, ModelError};

#[derive(Debug, Error)]
pub enum WorstCaseError {
    #[error("weights are identically zero")]
    DegenerateWeights,
    #[error("displacement cap must be positive and finite, got {0}")]
    InvalidCap(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How each empirical scenario may be transported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportMode {
    /// A scenario may split into a staying part and a moved part.
    Split,
    /// Every scenario keeps its full 1/S mass on a single point.
    Unsplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseDistribution {
    pub points: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
    /// Index of the empirical scenario each point was transported from.
    pub origins: Vec<usize>,
    pub transport_cost: f64,
    pub expected_utility: f64,
    /// Coordinate along which mass was moved.
    pub direction: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseReport {
    pub distribution: WorstCaseDistribution,
    pub dual_value: f64,
    pub gap: f64,
    pub d_cap: f64,
    pub mode: TransportMode,
}

/// 10·(1 + max|ξ̂ᵢⱼ|).
pub fn default_cap(inst: &DrpInstance) -> f64 {
    10.0 * (1.0 + inst.scenarios.returns().amax())
}

struct Moves {
    direction: usize,
    slope: f64,
    base: Vec<f64>,
}

fn prepare(inst: &DrpInstance, x: &[f64], d_cap: f64) -> Result<Moves, WorstCaseError> {
    if !(d_cap > 0.0 && d_cap.is_finite()) {
        return Err(WorstCaseError::InvalidCap(d_cap));
    }
    dual_certificate(inst, x)?;
    let (direction, slope) =
        x.iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (j, v)| if v > acc.1 { (j, v) } else { acc },
            );
    if slope <= 0.0 {
        return Err(WorstCaseError::DegenerateWeights);
    }
    Ok(Moves {
        direction,
        slope,
        base: inst.scenarios.portfolio_returns(x),
    })
}

/// Worst-case distribution with two-point splitting.
pub fn worst_case_distribution(
    inst: &DrpInstance,
    x: &[f64],
    d_cap: f64,
) -> Result<WorstCaseDistribution, WorstCaseError> {
    worst_case_with_mode(inst, x, d_cap, TransportMode::Split)
}

pub fn worst_case_with_mode(
    inst: &DrpInstance,
    x: &[f64],
    d_cap: f64,
    mode: TransportMode,
) -> Result<WorstCaseDistribution, WorstCaseError> {
    let mv = prepare(inst, x, d_cap)?;
    let s = inst.n_scenarios();
    let mass = 1.0 / s as f64;
    let p = &inst.profile;
    let h = |r: f64| utility_of_return(r, p.loss_aversion, p.reference_point);
    let drop = |i: usize, d: f64| h(mv.base[i]) - h(mv.base[i] - mv.slope * d);
    let budget = p.ambiguity_radius;

    // (scenario, moved mass, distance); scenarios not listed stay put.
    let mut moves: Vec<(usize, f64, f64)> = Vec::new();
    if budget > 0.0 {
        match mode {
            TransportMode::Split => {
                let mut order: Vec<usize> = (0..s).collect();
                let ratio: Vec<f64> = (0..s).map(|i| drop(i, d_cap) / d_cap).collect();
                order.sort_by(|&a, &b| ratio[b].total_cmp(&ratio[a]).then(a.cmp(&b)));
                let mut left = budget;
                for i in order {
                    if left <= 0.0 {
                        break;
                    }
                    let spend = left.min(mass * d_cap);
                    left -= spend;
                    if is_linear(inst, mv.base[i], mv.slope, d_cap) {
                        // Constant slope: one full-mass point is as good and simpler.
                        moves.push((i, mass, spend / mass));
                    } else {
                        moves.push((i, spend / d_cap, d_cap));
                    }
                }
            }
            TransportMode::Unsplit => {
                let total = budget * s as f64;
                let full = ((total / d_cap).floor() as usize).min(s);
                let rest = if full < s {
                    total - full as f64 * d_cap
                } else {
                    0.0
                };
                let mut by_gain: Vec<usize> = (0..s).collect();
                let gain: Vec<f64> = (0..s).map(|i| drop(i, d_cap)).collect();
                by_gain.sort_by(|&a, &b| gain[b].total_cmp(&gain[a]).then(a.cmp(&b)));
                // One scenario may take the remainder; try each and keep the best.
                let mut best: Option<(f64, Option<usize>)> = None;
                let candidates = std::iter::once(None).chain((0..s).map(Some));
                for partial in candidates {
                    if partial.is_some() && rest <= 0.0 {
                        break;
                    }
                    let fulls = by_gain.iter().filter(|&&i| Some(i) != partial).take(full);
                    let value: f64 = fulls.map(|&i| gain[i]).sum::<f64>()
                        + partial.map_or(0.0, |i| drop(i, rest));
                    if best.is_none_or(|(v, _)| value > v) {
                        best = Some((value, partial));
                    }
                }
                let partial = best.and_then(|b| b.1);
                for &i in by_gain.iter().filter(|&&i| Some(i) != partial).take(full) {
                    moves.push((i, mass, d_cap));
                }
                if let Some(i) = partial {
                    moves.push((i, mass, rest));
                }
            }
        }
    }
    moves.retain(|m| m.1 > 0.0 && m.2 > 0.0);
    moves.sort_by_key(|m| m.0);

    let xi = inst.scenarios.returns();
    let mut dist = WorstCaseDistribution {
        points: Vec::new(),
        masses: Vec::new(),
        origins: Vec::new(),
        transport_cost: 0.0,
        expected_utility: 0.0,
        direction: mv.direction,
    };
    let mut next = moves.iter().peekable();
    for i in 0..s {
        let row: Vec<f64> = xi.row(i).iter().copied().collect();
        let mut stay = mass;
        if let Some(&(_, q, d)) = next.next_if(|m| m.0 == i) {
            let mut moved = row.clone();
            moved[mv.direction] -= d;
            stay = if q >= mass { 0.0 } else { mass - q };
            let q = mass - stay;
            dist.expected_utility += q * h(mv.base[i] - mv.slope * d);
            dist.transport_cost += q * d;
            dist.points.push(moved);
            dist.masses.push(q);
            dist.origins.push(i);
        }
        if stay > 0.0 {
            dist.expected_utility += stay * h(mv.base[i]);
            dist.points.push(row);
            dist.masses.push(stay);
            dist.origins.push(i);
        }
    }
    Ok(dist)
}

/// Whether the utility drop of a scenario is linear over [0, d_cap].
fn is_linear(inst: &DrpInstance, r: f64, slope: f64, d_cap: f64) -> bool {
    let p = &inst.profile;
    p.loss_aversion == 0.0 || r <= p.reference_point || r - slope * d_cap >= p.reference_point
}

/// Full report: distribution, dual bound and their difference.
pub fn worst_case_report(
    inst: &DrpInstance,
    x: &[f64],
    d_cap: f64,
    mode: TransportMode,
) -> Result<WorstCaseReport, WorstCaseError> {
    let distribution = worst_case_with_mode(inst, x, d_cap, mode)?;
    let dual_value = dual_certificate(inst, x)?.value(inst.profile.ambiguity_radius);
    let gap = if inst.profile.ambiguity_radius == 0.0 {
        0.0
    } else {
        distribution.expected_utility - dual_value
    };
    Ok(WorstCaseReport {
        distribution,
        dual_value,
        gap,
        d_cap,
        mode,
    })
}

/// Primal worst-case value minus the dual closed form; zero at θ = 0.
pub fn duality_gap(inst: &DrpInstance, x: &[f64], d_cap: f64) -> Result<f64, WorstCaseError> {
    Ok(worst_case_report(inst, x, d_cap, TransportMode::Split)?.gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{CovarianceEstimate, ScenarioSet};
    use crate::model::{nominal_utility, AversionProfile};
    use crate::synthetic::random_instance;
    use nalgebra::DMatrix;

    fn one_point(xi: f64, phi: f64, r_hat: f64, theta: f64) -> DrpInstance {
        let s = ScenarioSet::from_rows(&[vec![xi]]).unwrap();
        let p = AversionProfile::new(phi, 1.0, theta, r_hat).unwrap();
        let cov = CovarianceEstimate::from_matrix(DMatrix::zeros(1, 1)).unwrap();
        DrpInstance::new(s, cov, p, 1).unwrap()
    }

    #[test]
    fn zero_budget_keeps_the_sample() {
        let inst = random_instance(1, 4, 6, 4)
            .with_profile(AversionProfile::default().with_radius(0.0))
            .unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let d = worst_case_distribution(&inst, &x, 10.0).unwrap();
        assert_eq!(d.points.len(), 6);
        assert!(d.masses.iter().all(|&m| m == 1.0 / 6.0));
        assert!((d.expected_utility - nominal_utility(&inst, &x)).abs() < 1e-15);
        assert_eq!(duality_gap(&inst, &x, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn linear_gain_region_moves_whole_mass() {
        let inst = one_point(0.05, 0.0, 0.0, 0.02);
        let d = worst_case_distribution(&inst, &[1.0], 1.0).unwrap();
        assert_eq!(d.points.len(), 1);
        assert!((d.points[0][0] - 0.03).abs() < 1e-15);
        assert!((d.expected_utility - 0.03).abs() < 1e-15);
    }

    #[test]
    fn loss_region_matches_dual() {
        let inst = one_point(0.05, 1.0, 0.1, 0.02);
        let r = worst_case_report(&inst, &[1.0], 1.0, TransportMode::Split).unwrap();
        assert!((r.distribution.expected_utility + 0.04).abs() < 1e-15);
        assert!((r.dual_value + 0.04).abs() < 1e-15);
        assert!(r.gap.abs() <= 1e-9);
    }

    #[test]
    fn gap_shrinks_with_cap() {
        for seed in 0..20 {
            let inst = random_instance(seed, 5, 8, 5);
            let x = [0.3, 0.25, 0.2, 0.15, 0.1];
            let g1 = duality_gap(&inst, &x, 1.0).unwrap();
            let g10 = duality_gap(&inst, &x, 10.0).unwrap();
            assert!(g1 >= g10 - 1e-15 && g10 >= -1e-9, "seed {seed}: {g1} {g10}");
        }
    }

    #[test]
    fn moves_only_the_largest_weight_coordinate() {
        let inst = random_instance(4, 4, 10, 4);
        let x = [0.1, 0.5, 0.2, 0.2];
        let d = worst_case_distribution(&inst, &x, 5.0).unwrap();
        assert_eq!(d.direction, 1);
        for (p, &o) in d.points.iter().zip(&d.origins) {
            let row = inst.scenarios.scenario(o);
            for j in [0, 2, 3] {
                assert_eq!(p[j], row[j]);
            }
        }
        let per: Vec<f64> = (0..10)
            .map(|i| {
                d.origins
                    .iter()
                    .zip(&d.masses)
                    .filter(|(&o, _)| o == i)
                    .map(|(_, m)| m)
                    .sum()
            })
            .collect();
        assert!(per.iter().all(|&m| (m - 0.1).abs() < 1e-15));
        assert!((d.transport_cost - inst.profile.ambiguity_radius).abs() < 1e-12);
    }

    #[test]
    fn unsplit_is_no_better_than_split() {
        for seed in 0..10 {
            let inst = random_instance(seed, 3, 5, 3);
            let x = [0.5, 0.3, 0.2];
            let a = worst_case_with_mode(&inst, &x, 10.0, TransportMode::Split).unwrap();
            let b = worst_case_with_mode(&inst, &x, 10.0, TransportMode::Unsplit).unwrap();
            assert!(a.expected_utility <= b.expected_utility + 1e-15);
            assert!(b.masses.iter().all(|&m| m == 0.2));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let inst = one_point(0.05, 1.0, 0.1, 0.02);
        assert!(matches!(
            worst_case_distribution(&inst, &[1.0], 0.0),
            Err(WorstCaseError::InvalidCap(_))
        ));
        assert!(worst_case_distribution(&inst, &[0.5], 1.0).is_err());
    }
}
