use drp_core::market_data::{read_returns, sample_covariance, write_returns, ScenarioSet};
use drp_core::model::{
    dual_certificate, evaluate_objective, nominal_utility, objective_value, piecewise_utility,
    AversionProfile, PortfolioSelection,
};
use drp_core::qp::{assemble_for_support, penalty_solve, solve_qp, PenaltyOptions};
use drp_core::search::{enumerate_exact, hybrid_search, tabu_search, TabuConfig};
use drp_core::synthetic::random_instance;
use drp_core::worst_case::{worst_case_distribution, worst_case_with_mode, TransportMode};
use proptest::prelude::*;

fn simplex(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| simplex(&v))
}

fn profile() -> impl Strategy<Value = AversionProfile> {
    (0.0f64..3.0, 0.1f64..5.0, 0.0f64..0.01, -0.01f64..0.02)
        .prop_map(|(phi, a, theta, r)| AversionProfile::new(phi, a, theta, r).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(rows in prop::collection::vec(prop::collection::vec(-0.5f64..0.5, 3), 1..12)) {
        let s = ScenarioSet::from_rows(&rows).unwrap();
        let mut buf = Vec::new();
        write_returns(&s, &mut buf).unwrap();
        prop_assert_eq!(read_returns(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn covariance_ignores_row_order(seed in 0u64..1000, rot in 1usize..9) {
        let s = random_instance(seed, 4, 10, 2).scenarios;
        let order: Vec<usize> = (0..10).map(|i| (i + rot) % 10).collect();
        let a = sample_covariance(&s).unwrap();
        let b = sample_covariance(&s.permute_rows(&order)).unwrap();
        prop_assert!((a.matrix() - b.matrix()).amax() <= 1e-15);
    }

    #[test]
    fn branches_agree(x in weights(3), xi in prop::collection::vec(-0.2f64..0.2, 3), phi in 0.0f64..4.0, r in -0.05f64..0.05) {
        let h = piecewise_utility(&x, phi, r, &xi).unwrap();
        let ret: f64 = x.iter().zip(&xi).map(|(a, b)| a * b).sum();
        prop_assert!((h - ret.min((1.0 + phi) * ret - phi * r)).abs() <= 1e-12);
    }

    #[test]
    fn dual_certificate_matches_objective(seed in 0u64..500, p in profile(), x in weights(4)) {
        let inst = random_instance(seed, 4, 8, 4).with_profile(p).unwrap();
        let cert = dual_certificate(&inst, &x).unwrap();
        let risk = 0.5 * p.risk_aversion * inst.covariance.quad_form(&x);
        prop_assert!((cert.value(p.ambiguity_radius) - risk - objective_value(&inst, &x)).abs() <= 1e-12);
    }

    #[test]
    fn objective_decreases_in_theta(seed in 0u64..500, p in profile(), x in weights(4), dt in 1e-4f64..0.01) {
        let inst = random_instance(seed, 4, 8, 4).with_profile(p).unwrap();
        let wider = inst.with_profile(p.with_radius(p.ambiguity_radius + dt)).unwrap();
        prop_assert!(objective_value(&wider, &x) < objective_value(&inst, &x));
    }

    #[test]
    fn worst_case_never_beats_nominal(seed in 0u64..500, p in profile(), x in weights(3)) {
        let inst = random_instance(seed, 3, 6, 3).with_profile(p).unwrap();
        let wc = objective_value(&inst, &x) + 0.5 * p.risk_aversion * inst.covariance.quad_form(&x);
        let nominal = nominal_utility(&inst, &x);
        if p.ambiguity_radius == 0.0 {
            prop_assert!((wc - nominal).abs() <= 1e-12);
        } else {
            prop_assert!(wc < nominal);
        }
    }

    #[test]
    fn qp_matches_closed_form_and_penalty(seed in 0u64..2000, k in 1usize..=4, s in 2usize..=10, p in profile()) {
        let inst = random_instance(seed, 5, s, k).with_profile(p).unwrap();
        let support: Vec<usize> = (0..k).collect();
        let sp = assemble_for_support(&inst, &support).unwrap();
        let sol = solve_qp(&sp, 1e-8).unwrap();
        prop_assert!(sol.report.max_residual() <= 1e-8);

        let x = &sol.z[..k];
        let sel = PortfolioSelection::from_subset(5, &support, x).unwrap();
        let full = inst.with_cardinality(k).unwrap();
        prop_assert!((evaluate_objective(&full, &sel).unwrap() - sol.objective).abs() <= 1e-6);

        // ν and λ sit exactly at the certificate for x.
        let cert = dual_certificate(&inst, &sel.weights).unwrap();
        prop_assert!((sol.z[k + s] - cert.lambda).abs() <= 1e-6);
        for (i, nu) in cert.nu.iter().enumerate() {
            prop_assert!((sol.z[k + i] - nu).abs() <= 1e-6);
        }

        let pen = penalty_solve(&sp, &PenaltyOptions::default()).unwrap();
        prop_assert!((pen.objective - sol.objective).abs() <= 1e-4);
        prop_assert!(pen.objective <= sol.objective + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn searches_respect_the_oracle(seed in 0u64..5000, n in 4usize..=8, k in 1usize..=3) {
        let inst = random_instance(seed, n, 15, k);
        let exact = enumerate_exact(&inst).unwrap();
        let cfg = TabuConfig::default().with_iterations(60).with_seed(seed);
        let tabu = tabu_search(&inst, &cfg).unwrap();
        let hybrid = hybrid_search(&inst, &cfg, &PenaltyOptions::default()).unwrap();
        for r in [&tabu, &hybrid] {
            prop_assert!(r.best_objective <= exact.best_objective + 1e-9);
            prop_assert!(r.trace.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(r.visited.iter().all(|s| s.len() == k));
            prop_assert_eq!(r.best_selection.cardinality, k);
        }
        let check = evaluate_objective(&inst, &tabu.best_selection).unwrap();
        prop_assert!((check - tabu.best_objective).abs() <= 1e-9);
    }

    #[test]
    fn worst_case_distribution_invariants(seed in 0u64..5000, p in profile(), x in weights(3), d_cap in 0.05f64..5.0) {
        let inst = random_instance(seed, 3, 6, 3).with_profile(p).unwrap();
        let cert = dual_certificate(&inst, &x).unwrap();
        let dual = cert.value(p.ambiguity_radius);
        let s = inst.n_scenarios();
        for mode in [TransportMode::Split, TransportMode::Unsplit] {
            let wc = worst_case_with_mode(&inst, &x, d_cap, mode).unwrap();
            prop_assert!((wc.masses.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(wc.masses.iter().all(|&m| m >= 0.0));
            prop_assert!(wc.transport_cost <= p.ambiguity_radius + 1e-9);
            prop_assert!(wc.expected_utility >= dual - 1e-9);

            let mut per_origin = vec![0.0; s];
            for ((pt, &m), &o) in wc.points.iter().zip(&wc.masses).zip(&wc.origins) {
                per_origin[o] += m;
                let origin = inst.scenarios.scenario(o);
                for j in 0..3 {
                    if j != wc.direction {
                        prop_assert_eq!(pt[j], origin[j]);
                    }
                }
            }
            prop_assert!(per_origin.iter().all(|m| (m - 1.0 / s as f64).abs() <= 1e-15));
        }
        // A larger cap can only move the primal value closer to the dual.
        let near = worst_case_distribution(&inst, &x, d_cap).unwrap().expected_utility;
        let far = worst_case_distribution(&inst, &x, 10.0 * d_cap).unwrap().expected_utility;
        prop_assert!(far <= near + 1e-12);
    }
}

#[test]
fn seeded_searches_are_reproducible() {
    let inst = random_instance(99, 9, 20, 3);
    let cfg = TabuConfig::default().with_iterations(40).with_seed(3);
    let a = tabu_search(&inst, &cfg).unwrap();
    let b = tabu_search(&inst, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.visited, b.visited);
}

#[test]
fn exact_enumeration_counts_subsets() {
    let inst = random_instance(5, 4, 10, 2);
    assert_eq!(enumerate_exact(&inst).unwrap().evaluations, 6);
}
