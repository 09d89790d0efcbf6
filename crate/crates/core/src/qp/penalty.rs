use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{QpError, SubproblemData};

/// Iterate of the penalty/barrier method: `z`, slacks `g > 0`, factor `τ`
/// and the factor update constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyState {
    pub z: Vec<f64>,
    pub g: Vec<f64>,
    pub tau: f64,
    pub growth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyOptions {
    pub tau0: f64,
    /// τ is multiplied by this after every outer iteration; must lie in (0, 1).
    pub shrink: f64,
    /// Outer stopping tolerance on ‖z(τₖ) − z(τₖ₋₁)‖∞.
    pub tolerance: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for PenaltyOptions {
    fn default() -> Self {
        Self {
            tau0: 1.0,
            shrink: 0.25,
            tolerance: 1e-6,
            max_outer: 60,
            max_inner: 200,
        }
    }
}

impl PenaltyOptions {
    pub fn validate(&self) -> Result<(), QpError> {
        let bad = |m: &str| Err(QpError::InvalidParameter(m.into()));
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return bad("tau0 must be positive");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("penalty factor constant must lie in (0, 1)");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PenaltyOutcome {
    /// Last inner minimizer; satisfies the constraints only up to O(τ).
    pub z: Vec<f64>,
    /// `z` with x projected onto the simplex and ν, λ at their closed forms.
    pub repaired: Vec<f64>,
    /// Objective of the maximization form at `repaired`.
    pub objective: f64,
    pub merit_trace: Vec<f64>,
    pub outer_iterations: usize,
    pub final_tau: f64,
    pub converged: bool,
}

fn check_dims(sp: &SubproblemData, st: &PenaltyState) -> Result<(), QpError> {
    if st.z.len() != sp.dim() || st.g.len() != sp.n_ineq() {
        return Err(QpError::DimensionMismatch(format!(
            "state has |z|={} |g|={}, subproblem needs {} and {}",
            st.z.len(),
            st.g.len(),
            sp.dim(),
            sp.n_ineq()
        )));
    }
    if !(st.tau > 0.0) {
        return Err(QpError::InvalidParameter("tau must be positive".into()));
    }
    if let Some(i) = st.g.iter().position(|&g| !(g > 0.0)) {
        return Err(QpError::BarrierDomain(i));
    }
    Ok(())
}

/// ψ(z, g, τ) = −f(z) + (1/2τ)ΣHᵢ(z)² + (1/2τ)Σ(Gᵢ(z)+gᵢ)² − τΣ ln gᵢ,
/// where f is the maximization objective of the subproblem.
pub fn penalty_value(sp: &SubproblemData, st: &PenaltyState) -> Result<f64, QpError> {
    check_dims(sp, st)?;
    let z = DVector::from_column_slice(&st.z);
    let h = sp.eq_values(&z);
    let r = sp.ineq_values(&z);
    let inv = 0.5 / st.tau;
    let slack: f64 = r.iter().zip(&st.g).map(|(ri, gi)| (ri + gi).powi(2)).sum();
    let barrier: f64 = st.g.iter().map(|g| g.ln()).sum();
    Ok(-sp.objective(&st.z) + inv * (h.norm_squared() + slack) - st.tau * barrier)
}

/// Gradient of ψ with respect to `(z, g)`, concatenated.
pub fn penalty_gradient(sp: &SubproblemData, st: &PenaltyState) -> Result<Vec<f64>, QpError> {
    check_dims(sp, st)?;
    let z = DVector::from_column_slice(&st.z);
    let h = sp.eq_values(&z);
    let mut s = sp.ineq_values(&z);
    for (si, gi) in s.iter_mut().zip(&st.g) {
        *si += gi;
    }
    let gz = sp.linear()
        + &sp.q * &z * sp.risk_aversion
        + (sp.eq_matrix.tr_mul(&h) + sp.ineq_matrix.tr_mul(&s)) / st.tau;
    let mut out: Vec<f64> = gz.iter().copied().collect();
    out.extend(
        s.iter()
            .zip(&st.g)
            .map(|(si, gi)| si / st.tau - st.tau / gi),
    );
    Ok(out)
}

/// Minimizer over g > 0 of (r+g)²/2τ − τ ln g, together with
/// d(r+g*)/dr. Both are evaluated in cancellation-free form.
fn optimal_slack(r: f64, tau: f64) -> (f64, f64) {
    let t2 = tau * tau;
    let root = (r * r + 4.0 * t2).sqrt();
    if r >= 0.0 {
        let g = 2.0 * t2 / (r + root);
        (g, (root + r) / (2.0 * root))
    } else {
        let g = (root - r) / 2.0;
        (g, 2.0 * t2 / (root * (root - r)))
    }
}

/// ψ with the slacks eliminated at their optimal values. Convex in z.
struct Reduced<'a> {
    sp: &'a SubproblemData,
    hessian_q: DMatrix<f64>,
    /// Hessian of the equality penalty, HᵀH; constant in z.
    eq_gram: DMatrix<f64>,
    /// Nonzero (column, value) pairs of each inequality row.
    rows: Vec<Vec<(usize, f64)>>,
    linear: DVector<f64>,
    tau: f64,
}

impl<'a> Reduced<'a> {
    fn new(sp: &'a SubproblemData, tau: f64) -> Self {
        let rows = sp
            .ineq_matrix
            .row_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &a)| a != 0.0)
                    .map(|(j, &a)| (j, a))
                    .collect()
            })
            .collect();
        Self {
            sp,
            hessian_q: &sp.q * sp.risk_aversion,
            eq_gram: sp.eq_matrix.tr_mul(&sp.eq_matrix),
            rows,
            linear: sp.linear(),
            tau,
        }
    }

    /// Gᵢ(z) from the stored nonzeros.
    fn ineq_values(&self, z: &DVector<f64>) -> Vec<f64> {
        self.rows
            .iter()
            .zip(self.sp.ineq_rhs.iter())
            .map(|(row, b)| row.iter().map(|&(j, a)| a * z[j]).sum::<f64>() - b)
            .collect()
    }

    fn slacks(&self, z: &DVector<f64>) -> Vec<f64> {
        self.ineq_values(z)
            .iter()
            .map(|&r| optimal_slack(r, self.tau).0)
            .collect()
    }

    fn value(&self, z: &DVector<f64>) -> f64 {
        let h = self.sp.eq_values(z);
        let r = self.ineq_values(z);
        let mut pen = h.norm_squared();
        let mut barrier = 0.0;
        for &ri in r.iter() {
            let (g, _) = optimal_slack(ri, self.tau);
            pen += (ri + g).powi(2);
            barrier += g.ln();
        }
        self.linear.dot(z) + 0.5 * z.dot(&(&self.hessian_q * z)) + 0.5 * pen / self.tau
            - self.tau * barrier
    }

    fn gradient_and_hessian(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let sp = self.sp;
        let h = sp.eq_values(z);
        let r = self.ineq_values(z);
        let mut s = DVector::zeros(r.len());
        let mut w = DVector::zeros(r.len());
        for (i, &ri) in r.iter().enumerate() {
            let (g, d) = optimal_slack(ri, self.tau);
            s[i] = ri + g;
            w[i] = d;
        }
        let inv = 1.0 / self.tau;
        let grad = &self.linear
            + &self.hessian_q * z
            + (sp.eq_matrix.tr_mul(&h) + sp.ineq_matrix.tr_mul(&s)) * inv;
        let mut hess = &self.hessian_q + &self.eq_gram * inv;
        for (row, &wi) in self.rows.iter().zip(w.iter()) {
            let c = wi * inv;
            for &(a, va) in row {
                for &(b, vb) in row {
                    hess[(a, b)] += c * va * vb;
                }
            }
        }
        (grad, hess)
    }

    /// Damped Newton with Armijo backtracking.
    fn minimize(&self, mut z: DVector<f64>, max_iter: usize) -> Result<DVector<f64>, QpError> {
        let mut f = self.value(&z);
        for _ in 0..max_iter {
            let (grad, hess) = self.gradient_and_hessian(&z);
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    let eig = hess.symmetric_eigen();
                    let floor = eig.eigenvalues.amax() * 1e-14;
                    let mut d = eig.eigenvectors.tr_mul(&grad);
                    for (di, &ev) in d.iter_mut().zip(eig.eigenvalues.iter()) {
                        *di = -*di / ev.max(floor).max(f64::MIN_POSITIVE);
                    }
                    &eig.eigenvectors * d
                }
            };
            let slope = grad.dot(&step);
            if !slope.is_finite() {
                return Err(QpError::Numerical("non-finite Newton direction".into()));
            }
            // Newton decrement, relative to the merit scale.
            if -slope <= 1e-15 * (1.0 + f.abs()) {
                return Ok(z);
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &z + &step * alpha;
                let ft = self.value(&trial);
                if ft <= f + 1e-4 * alpha * slope {
                    z = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // No further decrease is representable in double precision.
                return Ok(z);
            }
        }
        Ok(z)
    }
}

/// Runs the penalty/barrier method from the uniform-weight point.
pub fn penalty_solve(
    sp: &SubproblemData,
    opts: &PenaltyOptions,
) -> Result<PenaltyOutcome, QpError> {
    let k = sp.k();
    let start = sp.closed_form_point(&vec![1.0 / k as f64; k]);
    penalty_solve_from(sp, start.as_slice(), opts)
}

/// Runs the penalty/barrier method from `start`. Each outer iteration
/// minimizes ψ(·, ·, τ) and then sets τ ← C_τ·τ; the loop stops once two
/// successive minimizers (the first compared against `start`) agree to the
/// tolerance.
pub fn penalty_solve_from(
    sp: &SubproblemData,
    start: &[f64],
    opts: &PenaltyOptions,
) -> Result<PenaltyOutcome, QpError> {
    opts.validate()?;
    if start.len() != sp.dim() {
        return Err(QpError::DimensionMismatch(format!(
            "start has {} entries, expected {}",
            start.len(),
            sp.dim()
        )));
    }
    let mut z = DVector::from_column_slice(start);
    let mut tau = opts.tau0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut outer = 0;
    while outer < opts.max_outer {
        outer += 1;
        let reduced = Reduced::new(sp, tau);
        let next = reduced.minimize(z.clone(), opts.max_inner)?;
        trace.push(reduced.value(&next));
        let change = (&next - &z).amax();
        z = next;
        if change <= opts.tolerance {
            converged = true;
            break;
        }
        tau *= opts.shrink;
    }
    let repaired = repair(sp, &z);
    let repaired: Vec<f64> = repaired.iter().copied().collect();
    Ok(PenaltyOutcome {
        objective: sp.objective(&repaired),
        z: z.iter().copied().collect(),
        repaired,
        merit_trace: trace,
        outer_iterations: outer,
        final_tau: tau,
        converged,
    })
}

/// Projects the weights onto the simplex and recomputes ν, λ exactly.
fn repair(sp: &SubproblemData, z: &DVector<f64>) -> DVector<f64> {
    let k = sp.k();
    let mut x: Vec<f64> = z.rows(0, k).iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let total: f64 = x.iter().sum();
    if total > 0.0 {
        x.iter_mut().for_each(|v| *v /= total);
    } else {
        x.iter_mut().for_each(|v| *v = 1.0 / k as f64);
    }
    sp.closed_form_point(&x)
}

impl PenaltyState {
    /// State at `z` with every slack at its optimal value for `tau`.
    pub fn at(sp: &SubproblemData, z: Vec<f64>, tau: f64, growth: f64) -> Self {
        let g = Reduced::new(sp, tau).slacks(&DVector::from_column_slice(&z));
        Self { z, g, tau, growth }
    }
}
