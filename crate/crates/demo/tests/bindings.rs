use drp_demo::{solve_json, theta_sweep_json, worst_case_json, SAMPLE_CSV};
use serde_json::Value;

const SMALL: &str = r#"{"k": 2, "assets": 6, "periods": 24, "algo": "exact"}"#;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn exact_solve_on_a_trimmed_sample() {
    let r = parse(&solve_json(SAMPLE_CSV, SMALL).unwrap());
    assert_eq!(r["assets"].as_array().unwrap().len(), 6);
    assert_eq!(r["evaluations"], 15);
    assert_eq!(r["support"].as_array().unwrap().len(), 2);
    assert_eq!(r["nu"].as_array().unwrap().len(), 24);
    let w: f64 = r["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((w - 1.0).abs() < 1e-9);
}

#[test]
fn tabu_never_beats_exact() {
    let exact = parse(&solve_json(SAMPLE_CSV, SMALL).unwrap());
    let tabu = parse(
        &solve_json(
            SAMPLE_CSV,
            r#"{"k": 2, "assets": 6, "periods": 24, "iters": 20}"#,
        )
        .unwrap(),
    );
    assert!(tabu["objective"].as_f64().unwrap() <= exact["objective"].as_f64().unwrap() + 1e-9);
}

#[test]
fn worst_case_of_the_solution_matches_its_objective() {
    let r = parse(&solve_json(SAMPLE_CSV, SMALL).unwrap());
    let weights = r["weights"].to_string();
    let w = parse(&worst_case_json(SAMPLE_CSV, SMALL, &weights, 1e4, true).unwrap());
    assert!(w["report"]["gap"].as_f64().unwrap().abs() <= 1e-6);
    assert_eq!(w["nominal_returns"].as_array().unwrap().len(), 24);
    let mass: f64 = w["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["mass"].as_f64().unwrap())
        .sum();
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn zero_radius_moves_nothing() {
    let opts = r#"{"assets": 4, "periods": 12, "theta": 0}"#;
    let w = parse(&worst_case_json(SAMPLE_CSV, opts, "[0.25,0.25,0.25,0.25]", 0.0, false).unwrap());
    assert_eq!(w["report"]["gap"], 0.0);
    for p in w["points"].as_array().unwrap() {
        let i = p["origin"].as_u64().unwrap() as usize;
        assert_eq!(p["return"], w["nominal_returns"][i]);
    }
}

#[test]
fn sweep_decreases_in_theta() {
    let r = parse(&theta_sweep_json(SAMPLE_CSV, SMALL, 4).unwrap());
    let objs: Vec<f64> = r
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["objective"].as_f64().unwrap())
        .collect();
    assert_eq!(objs.len(), 4);
    assert!(objs.windows(2).all(|w| w[1] < w[0]), "{objs:?}");
}

#[test]
fn bad_input_is_reported() {
    assert!(solve_json(SAMPLE_CSV, r#"{"k": 0}"#)
        .unwrap_err()
        .contains("k must be"));
    assert!(solve_json(SAMPLE_CSV, r#"{"phi": -1}"#).is_err());
    assert!(solve_json("date,a\n1,x\n", "").is_err());
    assert!(solve_json(SAMPLE_CSV, r#"{"kk": 2}"#)
        .unwrap_err()
        .contains("unknown field"));
    assert!(worst_case_json(SAMPLE_CSV, SMALL, "[1.0]", 0.0, true)
        .unwrap_err()
        .contains("weights"));
    assert!(theta_sweep_json(SAMPLE_CSV, SMALL, 0).is_err());
}
