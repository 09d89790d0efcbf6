use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ActiveSetOptions, KktReport, QpError, QuadraticProgram};
use crate::model::{utility_of_return, DrpInstance};

/// Canonical form of the fixed-support subproblem over `z = [x (k), ν (S), λ]`:
///
/// ```text
///     maximize  −[I₂/S + θI₃]ᵀz − ½𝒜 zᵀQz
///     s.t.      Hᵢ(z) = 0,  Gᵢ(z) ≤ 0
/// ```
///
/// Inequality rows, in order:
/// `S` loss rows `φR̂ − (1+φ)ξ̂ᵢᵀx − νᵢ ≤ 0`, `S` gain rows `−ξ̂ᵢᵀx − νᵢ ≤ 0`,
/// `k` rows `xⱼ − λ/(1+φ) ≤ 0`, `k` rows `−xⱼ − λ/(1+φ) ≤ 0`, `−λ ≤ 0`,
/// `k` rows `−xⱼ ≤ 0` and `k` rows `xⱼ ≤ 1`. The single equality is `Σxⱼ = 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubproblemData {
    pub support: Vec<usize>,
    pub n_scenarios: usize,
    /// `(k+S+1)`-order split matrix with Σ̂′ in the top-left block.
    pub q: DMatrix<f64>,
    pub risk_aversion: f64,
    pub theta: f64,
    pub loss_aversion: f64,
    pub reference_point: f64,
    pub i1: DVector<f64>,
    pub i2: DVector<f64>,
    pub i3: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    /// ξ̂ restricted to the support, S×k.
    pub returns: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub report: KktReport,
    pub iterations: usize,
}

impl SubproblemData {
    pub fn k(&self) -> usize {
        self.support.len()
    }

    pub fn dim(&self) -> usize {
        self.k() + self.n_scenarios + 1
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    /// I₂/S + θI₃, the cost vector of the minimization form.
    pub fn linear(&self) -> DVector<f64> {
        &self.i2 / self.n_scenarios as f64 + &self.i3 * self.theta
    }

    /// Minimization form `½ zᵀ(𝒜Q)z + (I₂/S + θI₃)ᵀz`.
    pub fn program(&self) -> QuadraticProgram {
        QuadraticProgram {
            hessian: &self.q * self.risk_aversion,
            linear: self.linear(),
            eq_matrix: self.eq_matrix.clone(),
            eq_rhs: self.eq_rhs.clone(),
            ineq_matrix: self.ineq_matrix.clone(),
            ineq_rhs: self.ineq_rhs.clone(),
        }
    }

    /// Objective of the maximization form.
    pub fn objective(&self, z: &[f64]) -> f64 {
        let zv = DVector::from_column_slice(z);
        -self.linear().dot(&zv) - 0.5 * self.risk_aversion * zv.dot(&(&self.q * &zv))
    }

    /// Hᵢ(z), the equality residuals.
    pub fn eq_values(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.eq_matrix * z - &self.eq_rhs
    }

    /// Gᵢ(z), feasible when ≤ 0.
    pub fn ineq_values(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.ineq_matrix * z - &self.ineq_rhs
    }

    pub fn weights<'z>(&self, z: &'z [f64]) -> &'z [f64] {
        &z[..self.k()]
    }

    /// `z` with λ = (1+φ)‖x‖∞ and νᵢ at their tight lower bounds.
    pub fn closed_form_point(&self, x: &[f64]) -> DVector<f64> {
        let k = self.k();
        let s = self.n_scenarios;
        let phi = self.loss_aversion;
        let mut z = DVector::zeros(self.dim());
        z.rows_mut(0, k).copy_from_slice(x);
        let r = &self.returns * DVector::from_column_slice(x);
        for i in 0..s {
            z[k + i] = -utility_of_return(r[i], phi, self.reference_point);
        }
        z[k + s] = (1.0 + phi) * x.iter().copied().fold(0.0, f64::max);
        z
    }
}

/// Builds the subproblem for the support indicator `y` (length N, Σy = k).
pub fn assemble_subproblem(inst: &DrpInstance, y: &[bool]) -> Result<SubproblemData, QpError> {
    if y.len() != inst.n_assets() {
        return Err(QpError::DimensionMismatch(format!(
            "support vector has {} entries, instance has {} assets",
            y.len(),
            inst.n_assets()
        )));
    }
    let support: Vec<usize> = y
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(j, _)| j)
        .collect();
    assemble_for_support(inst, &support)
}

/// Builds the subproblem for the sorted asset indices `support`.
pub fn assemble_for_support(
    inst: &DrpInstance,
    support: &[usize],
) -> Result<SubproblemData, QpError> {
    if support.len() != inst.cardinality {
        return Err(QpError::CardinalityMismatch {
            expected: inst.cardinality,
            found: support.len(),
        });
    }
    if support.iter().any(|&j| j >= inst.n_assets()) || support.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QpError::DimensionMismatch(
            "support must be strictly increasing asset indices".into(),
        ));
    }
    let k = support.len();
    let s = inst.n_scenarios();
    let dim = k + s + 1;
    let p = &inst.profile;
    let phi = p.loss_aversion;
    let box_coef = 1.0 / (1.0 + phi);
    let lam = k + s;

    let mut q = DMatrix::zeros(dim, dim);
    q.view_mut((0, 0), (k, k))
        .copy_from(&inst.covariance.restrict(support));

    let mut i1 = DVector::zeros(dim);
    let mut i2 = DVector::zeros(dim);
    let mut i3 = DVector::zeros(dim);
    i1.rows_mut(0, k).fill(1.0);
    i2.rows_mut(k, s).fill(1.0);
    i3[lam] = 1.0;

    let returns = inst.scenarios.returns().select_columns(support);

    let mut eq_matrix = DMatrix::zeros(1, dim);
    eq_matrix.view_mut((0, 0), (1, k)).fill(1.0);
    let eq_rhs = DVector::from_element(1, 1.0);

    let l = 2 * s + 4 * k + 1;
    let mut g = DMatrix::zeros(l, dim);
    let mut h = DVector::zeros(l);
    for i in 0..s {
        for a in 0..k {
            g[(i, a)] = -(1.0 + phi) * returns[(i, a)];
            g[(s + i, a)] = -returns[(i, a)];
        }
        g[(i, k + i)] = -1.0;
        g[(s + i, k + i)] = -1.0;
        h[i] = -phi * p.reference_point;
    }
    let mut row = 2 * s;
    for a in 0..k {
        g[(row, a)] = 1.0;
        g[(row, lam)] = -box_coef;
        g[(row + k, a)] = -1.0;
        g[(row + k, lam)] = -box_coef;
        row += 1;
    }
    row += k;
    g[(row, lam)] = -1.0;
    row += 1;
    for a in 0..k {
        g[(row + a, a)] = -1.0;
        g[(row + k + a, a)] = 1.0;
        h[row + k + a] = 1.0;
    }

    Ok(SubproblemData {
        support: support.to_vec(),
        n_scenarios: s,
        q,
        risk_aversion: p.risk_aversion,
        theta: p.ambiguity_radius,
        loss_aversion: phi,
        reference_point: p.reference_point,
        i1,
        i2,
        i3,
        eq_matrix,
        eq_rhs,
        ineq_matrix: g,
        ineq_rhs: h,
        returns,
    })
}

/// Solves the subproblem exactly and certifies the result with its KKT residuals.
pub fn solve_qp(sp: &SubproblemData, tol: f64) -> Result<SubproblemSolution, QpError> {
    let k = sp.k();
    let s = sp.n_scenarios;
    let program = sp.program();
    let start = sp.closed_form_point(&vec![1.0 / k as f64; k]);
    let sol = program.solve_from(start, &ActiveSetOptions::default())?;

    // ν and λ only enter through their lower bounds; put them exactly there.
    // At θ = 0 λ carries no cost and the solver may leave it anywhere above
    // (1+φ)‖x‖∞, so this also makes λ unique.
    let x: Vec<f64> = sol
        .z
        .rows(0, k)
        .iter()
        .map(|&v| v.clamp(0.0, 1.0))
        .collect();
    let mut z = sp.closed_form_point(&x);
    z.rows_mut(0, k).copy_from(&sol.z.rows(0, k));
    debug_assert_eq!(z.len(), k + s + 1);

    let report = program.kkt_residual(&z, &sol.eq_multipliers, &sol.ineq_multipliers)?;
    if report.max_residual() > tol {
        return Err(QpError::NotCertified(report.max_residual(), tol));
    }
    let z: Vec<f64> = z.iter().copied().collect();
    Ok(SubproblemSolution {
        objective: sp.objective(&z),
        z,
        report,
        iterations: sol.iterations,
    })
}

/// KKT residuals of the subproblem at `(z, μ, ω)`; ω must be non-negative.
pub fn kkt_residual(
    sp: &SubproblemData,
    z: &[f64],
    mu: &[f64],
    omega: &[f64],
) -> Result<KktReport, QpError> {
    sp.program().kkt_residual(
        &DVector::from_column_slice(z),
        &DVector::from_column_slice(mu),
        &DVector::from_column_slice(omega),
    )
}
