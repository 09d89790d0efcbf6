//! The mixed-integer reformulation over `[x (N), y (N), ν (S), λ]`.
//!
//! ```text
//!     min  ½𝒜 xᵀΣ̂x + (1/S)Σνᵢ + θλ
//!     s.t. Σx = 1,  Σy = k,  x ≤ y,
//!          φR̂ − (1+φ)ξ̂ᵢᵀx ≤ νᵢ,  −ξ̂ᵢᵀx ≤ νᵢ,
//!          −λ/(1+φ) ≤ xⱼ ≤ λ/(1+φ),  λ ≥ 0,
//!          x ∈ [0,1]ᴺ,  y ∈ {0,1}ᴺ
//! ```
//!
//! The optimal value is the negated robust objective. This form is mainly an
//! interchange description; [`solve_by_enumeration`] solves it by fixing `y`
//! and handing each continuous relaxation to the generic QP solver.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::DrpInstance;
use crate::qp::{ActiveSetOptions, QpError, QuadraticProgram};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiqpDescription {
    pub n_assets: usize,
    pub n_scenarios: usize,
    pub cardinality: usize,
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiqpSolution {
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    /// Robust objective (maximization sense).
    pub objective: f64,
    pub evaluations: usize,
}

impl MiqpDescription {
    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn x_range(&self) -> std::ops::Range<usize> {
        0..self.n_assets
    }

    pub fn y_range(&self) -> std::ops::Range<usize> {
        self.n_assets..2 * self.n_assets
    }

    pub fn nu_range(&self) -> std::ops::Range<usize> {
        2 * self.n_assets..2 * self.n_assets + self.n_scenarios
    }

    pub fn lambda_index(&self) -> usize {
        2 * self.n_assets + self.n_scenarios
    }

    /// Continuous QP with `y` fixed, variable bounds turned into rows.
    pub fn relaxation_with_fixed(&self, y: &[bool]) -> QuadraticProgram {
        let n = self.n_vars();
        let mut eq_rows: Vec<(Vec<f64>, f64)> = (0..self.eq_rhs.len())
            .map(|r| {
                (
                    self.eq_matrix.row(r).iter().copied().collect(),
                    self.eq_rhs[r],
                )
            })
            .collect();
        for (j, &on) in y.iter().enumerate() {
            let mut row = vec![0.0; n];
            row[self.n_assets + j] = 1.0;
            eq_rows.push((row, if on { 1.0 } else { 0.0 }));
        }
        let mut ineq_rows: Vec<(Vec<f64>, f64)> = (0..self.ineq_rhs.len())
            .map(|r| {
                (
                    self.ineq_matrix.row(r).iter().copied().collect(),
                    self.ineq_rhs[r],
                )
            })
            .collect();
        for v in self.x_range() {
            let mut lo = vec![0.0; n];
            lo[v] = -1.0;
            ineq_rows.push((lo, -self.lower[v]));
            let mut hi = vec![0.0; n];
            hi[v] = 1.0;
            ineq_rows.push((hi, self.upper[v]));
        }
        let pack = |rows: &[(Vec<f64>, f64)]| {
            let m = DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0[c]);
            let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
            (m, b)
        };
        let (eq_matrix, eq_rhs) = pack(&eq_rows);
        let (ineq_matrix, ineq_rhs) = pack(&ineq_rows);
        QuadraticProgram {
            hessian: self.hessian.clone(),
            linear: self.linear.clone(),
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_rhs,
        }
    }
}

pub fn build_miqp(inst: &DrpInstance) -> MiqpDescription {
    let n = inst.n_assets();
    let s = inst.n_scenarios();
    let k = inst.cardinality;
    let p = &inst.profile;
    let phi = p.loss_aversion;
    let dim = 2 * n + s + 1;
    let lam = 2 * n + s;
    let xi = inst.scenarios.returns();

    let mut hessian = DMatrix::zeros(dim, dim);
    hessian
        .view_mut((0, 0), (n, n))
        .copy_from(&(inst.covariance.matrix() * p.risk_aversion));
    let mut linear = DVector::zeros(dim);
    linear.rows_mut(2 * n, s).fill(1.0 / s as f64);
    linear[lam] = p.ambiguity_radius;

    let mut eq_matrix = DMatrix::zeros(2, dim);
    eq_matrix.view_mut((0, 0), (1, n)).fill(1.0);
    eq_matrix.view_mut((1, n), (1, n)).fill(1.0);
    let eq_rhs = DVector::from_vec(vec![1.0, k as f64]);

    let rows = n + 2 * s + 2 * n + 1;
    let mut g = DMatrix::zeros(rows, dim);
    let mut h = DVector::zeros(rows);
    for j in 0..n {
        g[(j, j)] = 1.0;
        g[(j, n + j)] = -1.0;
    }
    let mut r = n;
    for i in 0..s {
        for j in 0..n {
            g[(r, j)] = -(1.0 + phi) * xi[(i, j)];
            g[(r + 1, j)] = -xi[(i, j)];
        }
        g[(r, 2 * n + i)] = -1.0;
        g[(r + 1, 2 * n + i)] = -1.0;
        h[r] = -phi * p.reference_point;
        r += 2;
    }
    for j in 0..n {
        g[(r, j)] = 1.0;
        g[(r, lam)] = -1.0 / (1.0 + phi);
        g[(r + 1, j)] = -1.0;
        g[(r + 1, lam)] = -1.0 / (1.0 + phi);
        r += 2;
    }
    g[(r, lam)] = -1.0;

    let mut lower = vec![f64::NEG_INFINITY; dim];
    let mut upper = vec![f64::INFINITY; dim];
    let mut integer = vec![false; dim];
    for j in 0..n {
        lower[j] = 0.0;
        upper[j] = 1.0;
        lower[n + j] = 0.0;
        upper[n + j] = 1.0;
        integer[n + j] = true;
    }

    MiqpDescription {
        n_assets: n,
        n_scenarios: s,
        cardinality: k,
        hessian,
        linear,
        eq_matrix,
        eq_rhs,
        ineq_matrix: g,
        ineq_rhs: h,
        lower,
        upper,
        integer,
    }
}

/// Global optimum by fixing every k-subset and solving the relaxation from a
/// phase-one start. Ties go to the lexicographically smallest support.
pub fn solve_by_enumeration(desc: &MiqpDescription) -> Result<MiqpSolution, QpError> {
    let n = desc.n_assets;
    let opts = ActiveSetOptions::default();
    let mut best: Option<MiqpSolution> = None;
    let mut evaluations = 0;
    for support in (0..n).combinations(desc.cardinality) {
        let mut y = vec![false; n];
        support.iter().for_each(|&j| y[j] = true);
        let qp = desc.relaxation_with_fixed(&y);
        let sol = qp.solve(&opts)?;
        evaluations += 1;
        let objective = -qp.objective(&sol.z);
        if best.as_ref().is_none_or(|b| objective > b.objective) {
            best = Some(MiqpSolution {
                weights: sol.z.rows(0, n).iter().copied().collect(),
                support,
                objective,
                evaluations: 0,
            });
        }
    }
    let mut best =
        best.ok_or_else(|| QpError::InvalidParameter("no subsets to enumerate".into()))?;
    best.evaluations = evaluations;
    Ok(best)
}
