//! Dense primal active-set method for convex quadratic programs
//!
//! ```text
//!     minimize    ½ zᵀPz + cᵀz
//!     subject to  A z  = b
//!                 G z <= h
//! ```
//!
//! `P` only has to be positive semidefinite. Each iteration minimizes over
//! the null space of the working set; directions of zero curvature with a
//! descent slope are followed until a constraint blocks them, so linear
//! programs (`P = 0`) are handled by the same loop. A phase-one linear
//! program supplies a feasible start when none is given.

use nalgebra::{DMatrix, DVector, SymmetricEigen, QR};

use super::{KktReport, QpError};

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ActiveSetOptions {
    /// Relative tolerance for reduced gradients and multiplier signs.
    pub optimality_tol: f64,
    /// Slack below which an inequality counts as active at the start point.
    pub activity_tol: f64,
    /// `None` picks a budget from the problem size.
    pub max_iterations: Option<usize>,
}

impl Default for ActiveSetOptions {
    fn default() -> Self {
        Self {
            optimality_tol: 1e-11,
            activity_tol: 1e-12,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
}

impl QuadraticProgram {
    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    fn check_dims(&self) -> Result<(), QpError> {
        let n = self.n_vars();
        let ok = self.hessian.nrows() == n
            && self.hessian.ncols() == n
            && self.eq_matrix.ncols() == n
            && self.eq_matrix.nrows() == self.eq_rhs.len()
            && self.ineq_matrix.ncols() == n
            && self.ineq_matrix.nrows() == self.ineq_rhs.len();
        if ok {
            Ok(())
        } else {
            Err(QpError::DimensionMismatch(
                "inconsistent program dimensions".into(),
            ))
        }
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// Largest equality residual or inequality violation at `z`.
    pub fn infeasibility(&self, z: &DVector<f64>) -> f64 {
        let eq = (&self.eq_matrix * z - &self.eq_rhs).amax();
        let ineq = (&self.ineq_matrix * z - &self.ineq_rhs)
            .iter()
            .fold(0.0f64, |m, &v| m.max(v));
        eq.max(ineq)
    }

    /// Residuals of the KKT system `Pz + c + Aᵀμ + Gᵀω = 0`, `ω ≥ 0`,
    /// `ωᵢ(Gz − h)ᵢ = 0` at the given point and multipliers.
    pub fn kkt_residual(
        &self,
        z: &DVector<f64>,
        mu: &DVector<f64>,
        omega: &DVector<f64>,
    ) -> Result<KktReport, QpError> {
        self.check_dims()?;
        if z.len() != self.n_vars()
            || mu.len() != self.eq_rhs.len()
            || omega.len() != self.ineq_rhs.len()
        {
            return Err(QpError::DimensionMismatch(format!(
                "z/μ/ω have lengths {}/{}/{}, expected {}/{}/{}",
                z.len(),
                mu.len(),
                omega.len(),
                self.n_vars(),
                self.eq_rhs.len(),
                self.ineq_rhs.len()
            )));
        }
        if let Some(i) = omega.iter().position(|&w| w < 0.0) {
            return Err(QpError::NegativeMultiplier(i));
        }
        let grad = &self.hessian * z
            + &self.linear
            + self.eq_matrix.transpose() * mu
            + self.ineq_matrix.transpose() * omega;
        let slack = &self.ineq_matrix * z - &self.ineq_rhs;
        let complementarity = omega
            .iter()
            .zip(slack.iter())
            .fold(0.0f64, |m, (w, s)| m.max((w * s).abs()));
        Ok(KktReport {
            stationarity: grad.amax(),
            primal_infeasibility: self.infeasibility(z),
            complementarity,
            eq_multipliers: mu.iter().copied().collect(),
            ineq_multipliers: omega.iter().copied().collect(),
        })
    }

    /// Solves from a phase-one feasible point.
    pub fn solve(&self, opts: &ActiveSetOptions) -> Result<QpSolution, QpError> {
        self.check_dims()?;
        let start = self.feasible_point(opts)?;
        self.solve_from(start, opts)
    }

    /// Solves from a caller-supplied feasible point.
    pub fn solve_from(
        &self,
        start: DVector<f64>,
        opts: &ActiveSetOptions,
    ) -> Result<QpSolution, QpError> {
        self.check_dims()?;
        if start.len() != self.n_vars() {
            return Err(QpError::DimensionMismatch(
                "start point has wrong length".into(),
            ));
        }
        let scale = 1.0 + start.amax();
        if self.infeasibility(&start) > 1e-9 * scale {
            return Err(QpError::InfeasibleStart(self.infeasibility(&start)));
        }
        ActiveSet::new(self, opts).run(start)
    }

    /// Phase one: minimize the total constraint violation with elastic slacks.
    fn feasible_point(&self, opts: &ActiveSetOptions) -> Result<DVector<f64>, QpError> {
        let n = self.n_vars();
        let m = self.eq_rhs.len();
        let l = self.ineq_rhs.len();
        let z0 = DVector::zeros(n);
        if self.infeasibility(&z0) <= opts.activity_tol {
            return Ok(z0);
        }
        // Variables: [z, s⁺ (m), s⁻ (m), t (l)].
        let nv = n + 2 * m + l;
        let mut eq = DMatrix::zeros(m, nv);
        eq.view_mut((0, 0), (m, n)).copy_from(&self.eq_matrix);
        for i in 0..m {
            eq[(i, n + i)] = 1.0;
            eq[(i, n + m + i)] = -1.0;
        }
        let mut ineq = DMatrix::zeros(l + 2 * m + l, nv);
        ineq.view_mut((0, 0), (l, n)).copy_from(&self.ineq_matrix);
        let mut rhs = DVector::zeros(l + 2 * m + l);
        rhs.rows_mut(0, l).copy_from(&self.ineq_rhs);
        for i in 0..l {
            ineq[(i, n + 2 * m + i)] = -1.0;
        }
        for j in 0..(2 * m + l) {
            ineq[(l + j, n + j)] = -1.0;
        }
        let mut cost = DVector::zeros(nv);
        cost.rows_mut(n, 2 * m + l).fill(1.0);
        let phase_one = QuadraticProgram {
            hessian: DMatrix::zeros(nv, nv),
            linear: cost,
            eq_matrix: eq,
            eq_rhs: self.eq_rhs.clone(),
            ineq_matrix: ineq,
            ineq_rhs: rhs,
        };
        let mut start = DVector::zeros(nv);
        for i in 0..m {
            let r = self.eq_rhs[i];
            start[n + i] = r.max(0.0);
            start[n + m + i] = (-r).max(0.0);
        }
        for i in 0..l {
            start[n + 2 * m + i] = (-self.ineq_rhs[i]).max(0.0);
        }
        let sol = ActiveSet::new(&phase_one, opts).run(start)?;
        let violation: f64 = sol.z.rows(n, 2 * m + l).sum();
        let z = sol.z.rows(0, n).into_owned();
        let scale = 1.0 + self.eq_rhs.amax().max(self.ineq_rhs.amax());
        if violation > 1e-9 * scale || self.infeasibility(&z) > 1e-9 * scale {
            return Err(QpError::Infeasible(violation));
        }
        Ok(z)
    }
}

/// Orthonormal basis of a growing set of rows, used to keep the initial
/// working set linearly independent.
struct RowSpan {
    n: usize,
    basis: Vec<DVector<f64>>,
}

impl RowSpan {
    fn new(n: usize) -> Self {
        Self {
            n,
            basis: Vec::new(),
        }
    }

    /// Adds `row` if it is not in the current span; returns whether it was added.
    fn insert(&mut self, row: DVector<f64>) -> bool {
        if self.basis.len() >= self.n {
            return false;
        }
        let size = row.amax();
        let mut r = row;
        // Two passes of Gram-Schmidt keep the basis orthogonal to rounding.
        for _ in 0..2 {
            for q in &self.basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        if r.amax() <= 1e-9 * size {
            return false;
        }
        let norm = r.norm();
        self.basis.push(r / norm);
        true
    }
}

struct ActiveSet<'a> {
    qp: &'a QuadraticProgram,
    opts: ActiveSetOptions,
    hessian_scale: f64,
    row_norms: Vec<f64>,
}

struct Subspace {
    basis: DMatrix<f64>,
    q_range: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl<'a> ActiveSet<'a> {
    fn new(qp: &'a QuadraticProgram, opts: &ActiveSetOptions) -> Self {
        let row_norms = (0..qp.ineq_matrix.nrows())
            .map(|i| qp.ineq_matrix.row(i).amax().max(f64::MIN_POSITIVE))
            .collect();
        Self {
            qp,
            opts: *opts,
            hessian_scale: qp.hessian.amax(),
            row_norms,
        }
    }

    fn working_matrix(&self, eq_rows: &[usize], working: &[usize]) -> DMatrix<f64> {
        let m = eq_rows.len();
        let n = self.qp.n_vars();
        let mut a = DMatrix::zeros(m + working.len(), n);
        for (r, &i) in eq_rows.iter().enumerate() {
            a.row_mut(r).copy_from(&self.qp.eq_matrix.row(i));
        }
        for (r, &i) in working.iter().enumerate() {
            a.row_mut(m + r).copy_from(&self.qp.ineq_matrix.row(i));
        }
        a
    }

    /// Orthonormal bases of range(Aᵀ) and null(A) from a QR factorization of
    /// the square matrix `[Aᵀ | 0]`.
    fn subspace(&self, a: &DMatrix<f64>) -> Subspace {
        let n = self.qp.n_vars();
        let mw = a.nrows();
        if mw == 0 {
            return Subspace {
                basis: DMatrix::identity(n, n),
                q_range: DMatrix::zeros(n, 0),
                r: DMatrix::zeros(0, 0),
            };
        }
        let mut padded = DMatrix::zeros(n, n);
        padded.columns_mut(0, mw).copy_from(&a.transpose());
        let qr = QR::new(padded);
        let q = qr.q();
        let r = qr.r();
        Subspace {
            basis: q.columns(mw, n - mw).into_owned(),
            q_range: q.columns(0, mw).into_owned(),
            r: r.view((0, 0), (mw, mw)).into_owned(),
        }
    }

    fn run(&self, mut z: DVector<f64>) -> Result<QpSolution, QpError> {
        let qp = self.qp;
        let n = qp.n_vars();
        let l = qp.ineq_matrix.nrows();
        let max_iter = self.opts.max_iterations.unwrap_or(50 * (n + l) + 200);

        let slack = &qp.ineq_rhs - &qp.ineq_matrix * &z;
        let mut working: Vec<usize> = Vec::new();
        let mut span = RowSpan::new(n);
        // Redundant equalities are dropped; the start is feasible, so they
        // are consistent and get a zero multiplier.
        let eq_rows: Vec<usize> = (0..qp.eq_matrix.nrows())
            .filter(|&i| span.insert(qp.eq_matrix.row(i).transpose()))
            .collect();
        let m = eq_rows.len();
        for i in 0..l {
            let tol = self.opts.activity_tol * (1.0 + qp.ineq_rhs[i].abs());
            if slack[i] <= tol && span.insert(qp.ineq_matrix.row(i).transpose()) {
                working.push(i);
            }
        }

        let tol = self.opts.optimality_tol;
        let mut zero_steps = 0usize;
        for iter in 0..max_iter {
            let bland = zero_steps > n + 2;
            let a = self.working_matrix(&eq_rows, &working);
            let sub = self.subspace(&a);
            let grad = &qp.hessian * &z + &qp.linear;
            let scale = 1.0 + grad.amax();
            let nz = sub.basis.ncols();
            let reduced = sub.basis.transpose() * &grad;

            if nz > 0 && reduced.amax() > tol * scale {
                let (p, newton) = self.direction(&sub.basis, &reduced, tol * scale);
                let curvature = p.dot(&(&qp.hessian * &p));
                let slope = grad.dot(&p);
                let alpha_opt = if newton {
                    1.0
                } else if curvature > 0.0 {
                    -slope / curvature
                } else {
                    f64::INFINITY
                };
                let p_norm = p.amax();
                let gp = &qp.ineq_matrix * &p;
                let gz = &qp.ineq_matrix * &z;
                let mut alpha = alpha_opt;
                let mut blocking = None;
                for i in 0..l {
                    if working.contains(&i) {
                        continue;
                    }
                    if gp[i] > 1e-12 * p_norm * self.row_norms[i] {
                        let a_i = ((qp.ineq_rhs[i] - gz[i]) / gp[i]).max(0.0);
                        let better = match blocking {
                            None => a_i <= alpha,
                            Some(_) => a_i < alpha,
                        };
                        if better {
                            alpha = a_i;
                            blocking = Some(i);
                        }
                    }
                }
                if !alpha.is_finite() {
                    return Err(QpError::Unbounded);
                }
                zero_steps = if alpha * p_norm <= 1e-15 * (1.0 + z.amax()) {
                    zero_steps + 1
                } else {
                    0
                };
                z += alpha * &p;
                if let Some(i) = blocking {
                    working.push(i);
                }
                continue;
            }

            // Stationary on the current face: Aᵀy = −∇f.
            let rhs = -(sub.q_range.transpose() * &grad);
            let y = if rhs.is_empty() {
                DVector::zeros(0)
            } else {
                sub.r
                    .solve_upper_triangular(&rhs)
                    .ok_or_else(|| QpError::Numerical("singular working set".into()))?
            };
            let mut drop: Option<(usize, f64)> = None;
            for (r, &i) in working.iter().enumerate() {
                let w = y[m + r];
                if w < -tol * scale {
                    let take = match drop {
                        None => true,
                        Some((pos, best)) => {
                            if bland {
                                i < working[pos]
                            } else {
                                w < best
                            }
                        }
                    };
                    if take {
                        drop = Some((r, w));
                    }
                }
            }
            match drop {
                Some((pos, _)) => {
                    working.remove(pos);
                }
                None => {
                    let mut omega = DVector::zeros(l);
                    for (r, &i) in working.iter().enumerate() {
                        omega[i] = y[m + r].max(0.0);
                    }
                    let mut mu = DVector::zeros(qp.eq_matrix.nrows());
                    for (r, &i) in eq_rows.iter().enumerate() {
                        mu[i] = y[r];
                    }
                    return Ok(QpSolution {
                        z,
                        eq_multipliers: mu,
                        ineq_multipliers: omega,
                        iterations: iter + 1,
                    });
                }
            }
        }
        Err(QpError::MaxIterations(max_iter))
    }

    /// Newton step on the face, or a zero-curvature descent ray when the
    /// reduced Hessian is singular along a descent direction.
    fn direction(
        &self,
        basis: &DMatrix<f64>,
        reduced: &DVector<f64>,
        gtol: f64,
    ) -> (DVector<f64>, bool) {
        let hz = &self.qp.hessian * basis;
        let reduced_hessian = basis.transpose() * hz;
        let eig = SymmetricEigen::new(reduced_hessian);
        let htol = 1e-10 * self.hessian_scale;
        let nz = reduced.len();
        let mut ray = DVector::zeros(nz);
        let mut newton = DVector::zeros(nz);
        let mut has_ray = false;
        for k in 0..nz {
            let v = eig.eigenvectors.column(k);
            let proj = v.dot(reduced);
            let mu = eig.eigenvalues[k];
            if mu > htol {
                newton -= (proj / mu) * v;
            } else if proj.abs() > gtol * 1e-3 {
                ray -= proj * v;
                has_ray = true;
            }
        }
        if has_ray {
            (basis * ray, false)
        } else {
            (basis * newton, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex_program(p: DMatrix<f64>, c: Vec<f64>) -> QuadraticProgram {
        let n = c.len();
        QuadraticProgram {
            hessian: p,
            linear: DVector::from_vec(c),
            eq_matrix: DMatrix::from_element(1, n, 1.0),
            eq_rhs: DVector::from_element(1, 1.0),
            ineq_matrix: -DMatrix::<f64>::identity(n, n),
            ineq_rhs: DVector::zeros(n),
        }
    }

    #[test]
    fn linear_program_on_simplex_picks_vertex() {
        let qp = simplex_program(DMatrix::zeros(3, 3), vec![0.3, -0.2, 0.1]);
        let sol = qp.solve(&ActiveSetOptions::default()).unwrap();
        assert!((sol.z[1] - 1.0).abs() < 1e-12);
        let kkt = qp
            .kkt_residual(&sol.z, &sol.eq_multipliers, &sol.ineq_multipliers)
            .unwrap();
        assert!(kkt.max_residual() < 1e-12, "{kkt:?}");
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut qp = simplex_program(DMatrix::identity(3, 3), vec![-1.0, 0.0, 0.5]);
        qp.eq_matrix = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        qp.eq_rhs = DVector::from_vec(vec![1.0, 2.0]);
        let sol = qp.solve(&ActiveSetOptions::default()).unwrap();
        let kkt = qp
            .kkt_residual(&sol.z, &sol.eq_multipliers, &sol.ineq_multipliers)
            .unwrap();
        assert!(kkt.max_residual() < 1e-12, "{kkt:?}");
        assert!((sol.z[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strictly_convex_interior_minimum() {
        // min ½|z|² − z₁ − z₂ on the simplex → (½, ½).
        let qp = simplex_program(DMatrix::identity(2, 2), vec![-1.0, -1.0]);
        let sol = qp.solve(&ActiveSetOptions::default()).unwrap();
        assert!((sol.z[0] - 0.5).abs() < 1e-12 && (sol.z[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn known_two_variable_qp() {
        // min (z₁−1)² + (z₂−2.5)² s.t. the classic five-row polytope; optimum (1.4, 1.7).
        let qp = QuadraticProgram {
            hessian: DMatrix::from_diagonal_element(2, 2, 2.0),
            linear: DVector::from_vec(vec![-2.0, -5.0]),
            eq_matrix: DMatrix::zeros(0, 2),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::from_row_slice(
                5,
                2,
                &[-1.0, 2.0, 1.0, 2.0, 1.0, -2.0, -1.0, 0.0, 0.0, -1.0],
            ),
            ineq_rhs: DVector::from_vec(vec![2.0, 6.0, 2.0, 0.0, 0.0]),
        };
        let sol = qp.solve(&ActiveSetOptions::default()).unwrap();
        assert!(
            (sol.z[0] - 1.4).abs() < 1e-10 && (sol.z[1] - 1.7).abs() < 1e-10,
            "{}",
            sol.z
        );
        let kkt = qp
            .kkt_residual(&sol.z, &sol.eq_multipliers, &sol.ineq_multipliers)
            .unwrap();
        assert!(kkt.max_residual() < 1e-12);
    }

    #[test]
    fn detects_infeasible_constraints() {
        let qp = QuadraticProgram {
            hessian: DMatrix::identity(1, 1),
            linear: DVector::zeros(1),
            eq_matrix: DMatrix::zeros(0, 1),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            ineq_rhs: DVector::from_vec(vec![-1.0, -1.0]),
        };
        assert!(matches!(
            qp.solve(&ActiveSetOptions::default()),
            Err(QpError::Infeasible(_))
        ));
    }

    #[test]
    fn detects_unbounded_ray() {
        let qp = QuadraticProgram {
            hessian: DMatrix::zeros(1, 1),
            linear: DVector::from_vec(vec![-1.0]),
            eq_matrix: DMatrix::zeros(0, 1),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::from_row_slice(1, 1, &[-1.0]),
            ineq_rhs: DVector::zeros(1),
        };
        assert!(matches!(
            qp.solve(&ActiveSetOptions::default()),
            Err(QpError::Unbounded)
        ));
    }

    #[test]
    fn kkt_rejects_negative_multiplier() {
        let qp = simplex_program(DMatrix::zeros(2, 2), vec![0.0, 0.0]);
        let z = DVector::from_vec(vec![0.5, 0.5]);
        let res = qp.kkt_residual(&z, &DVector::zeros(1), &DVector::from_vec(vec![0.1, -0.1]));
        assert!(matches!(res, Err(QpError::NegativeMultiplier(1))));
    }
}
