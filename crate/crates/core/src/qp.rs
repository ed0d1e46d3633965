//! Dense strictly convex QP solver for the safety filter.
//!
//! ```text
//!     minimize    ½ xᵀHx + gᵀx
//!     subject to  A x ≤ b,   x_i ≥ lb_i (optional)
//! ```
//!
//! Implements the Goldfarb–Idnani dual active-set method: start from the
//! unconstrained minimizer and repeatedly add the most violated constraint,
//! dropping active constraints whose multiplier would turn negative. Every
//! iterate is dual feasible, so no phase-one feasible point is required, and
//! a linearly dependent violated row with no droppable partner is a Farkas
//! certificate of infeasibility. The final active set is polished by an
//! exact equality-constrained solve before the KKT residuals are measured.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// `m × n` inequality matrix of `A x ≤ b`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Per-variable lower bounds; empty means none.
    #[serde(default)]
    pub lower_bounds: Vec<Option<f64>>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        Self { hessian, linear, a, b, lower_bounds: Vec::new() }
    }

    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self::new(hessian, linear, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn with_lower_bounds(mut self, lb: Vec<Option<f64>>) -> Self {
        self.lower_bounds = lb;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Inequality rows with the lower bounds appended as `−x_i ≤ −lb_i`.
    pub fn expanded_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.num_vars();
        let bounds: Vec<(usize, f64)> =
            self.lower_bounds.iter().enumerate().filter_map(|(i, lb)| lb.map(|v| (i, v))).collect();
        let m = self.a.nrows() + bounds.len();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        a.view_mut((0, 0), (self.a.nrows(), n)).copy_from(&self.a);
        b.rows_mut(0, self.a.nrows()).copy_from(&self.b);
        for (k, (i, lb)) in bounds.into_iter().enumerate() {
            let r = self.a.nrows() + k;
            a[(r, i)] = -1.0;
            b[r] = -lb;
        }
        (a, b)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.hessian.shape() != (n, n) || self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(Error::InvalidInput("QP dimensions are inconsistent".into()));
        }
        if !self.lower_bounds.is_empty() && self.lower_bounds.len() != n {
            return Err(Error::InvalidInput("lower_bounds must have one entry per variable".into()));
        }
        let asym = (&self.hessian - self.hessian.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::InvalidInput(format!("QP hessian not symmetric (|H − Hᵀ| = {asym:e})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    Infeasible,
    MaxIter,
    /// Active set found, but the polished point misses the KKT tolerance.
    Inaccurate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal_feasibility).max(self.dual_feasibility).max(self.complementarity)
    }

    pub fn compute(p: &QpProblem, x: &DVector<f64>, multipliers: &DVector<f64>) -> Self {
        let (a, b) = p.expanded_rows();
        let grad = &p.hessian * x + &p.linear + a.transpose() * multipliers;
        let slack = &a * x - &b;
        Self {
            stationarity: grad.amax(),
            primal_feasibility: slack.max().max(0.0),
            dual_feasibility: (-multipliers.min()).max(0.0),
            complementarity: slack.component_mul(multipliers).amax(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per expanded row (A rows first, then bounds).
    pub multipliers: DVector<f64>,
    pub active_set: Vec<usize>,
    pub kkt: KktResiduals,
    pub status: QpStatus,
    pub iterations: usize,
    /// Row weights `y ≥ 0` with `Aᵀy = 0`, `bᵀy < 0` when infeasible.
    pub farkas: Option<DVector<f64>>,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

#[derive(Debug, Clone)]
pub struct QpSolver {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200 }
    }
}

struct ActiveFactor {
    /// Orthonormal basis of `L⁻¹N` (n × q).
    q1: DMatrix<f64>,
    /// Upper triangular `R` with `L⁻¹N = Q₁R`.
    r: DMatrix<f64>,
}

impl ActiveFactor {
    fn new(l_inv_rows: &DMatrix<f64>, active: &[usize]) -> Option<Self> {
        if active.is_empty() {
            return None;
        }
        let n = l_inv_rows.nrows();
        let mut b = DMatrix::zeros(n, active.len());
        for (k, &j) in active.iter().enumerate() {
            b.set_column(k, &l_inv_rows.column(j));
        }
        let qr = b.qr();
        Some(Self { q1: qr.q(), r: qr.r() })
    }
}

impl QpSolver {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter }
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution> {
        self.solve_warm(p, &[])
    }

    /// Same result as [`QpSolver::solve`]; rows listed in `warm` are tried
    /// first when choosing which violated constraint to add.
    pub fn solve_warm(&mut self, p: &QpProblem, warm: &[usize]) -> Result<QpSolution> {
        p.validate()?;
        let n = p.num_vars();
        let chol = p
            .hessian
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("QP hessian is not positive definite".into()))?;
        let l = chol.l();
        let l_inv = l.clone().try_inverse().ok_or_else(|| Error::InvalidInput("singular Cholesky factor".into()))?;
        let (a, b) = p.expanded_rows();
        let m = a.nrows();
        // Column j holds L⁻¹ n_j with n_j = −a_j (GI works with n_jᵀx ≥ e_j).
        let l_inv_rows = -(&l_inv * a.transpose());
        let l_inv_t = l_inv.transpose();

        let mut x = -chol.solve(&p.linear);
        let mut active: Vec<usize> = Vec::with_capacity(n);
        let mut u: Vec<f64> = Vec::with_capacity(n);
        let mut iterations = 0usize;
        let viol_tol = 0.1 * self.tol;

        let finish = |x: DVector<f64>,
                      active: Vec<usize>,
                      u: Vec<f64>,
                      status: QpStatus,
                      iterations: usize,
                      farkas: Option<DVector<f64>>| {
            let mut multipliers = DVector::zeros(m);
            for (&j, &uj) in active.iter().zip(u.iter()) {
                multipliers[j] = uj;
            }
            let kkt = KktResiduals::compute(p, &x, &multipliers);
            QpSolution { x, multipliers, active_set: active, kkt, status, iterations, farkas }
        };

        loop {
            // Choose the constraint to add.
            let slack = &a * &x - &b;
            let mut chosen: Option<usize> =
                warm.iter().copied().find(|&j| j < m && !active.contains(&j) && slack[j] > viol_tol);
            if chosen.is_none() {
                let mut worst = viol_tol;
                for j in 0..m {
                    if slack[j] > worst && !active.contains(&j) {
                        worst = slack[j];
                        chosen = Some(j);
                    }
                }
            }
            let Some(pidx) = chosen else {
                return Ok(self.polish(p, &a, &b, &chol, &l_inv, x, active, u, iterations, finish));
            };

            let mut u_p = 0.0;
            loop {
                if iterations >= self.max_iter {
                    return Ok(finish(x, active, u, QpStatus::MaxIter, iterations, None));
                }
                iterations += 1;
                let v = l_inv_rows.column(pidx).into_owned();
                let (w, r) = match ActiveFactor::new(&l_inv_rows, &active) {
                    Some(f) => {
                        let d1 = f.q1.transpose() * &v;
                        let w = &v - &f.q1 * &d1;
                        let r =
                            f.r.solve_upper_triangular(&d1)
                                .unwrap_or_else(|| DVector::from_element(active.len(), f64::NAN));
                        (w, r)
                    }
                    None => (v.clone(), DVector::zeros(0)),
                };
                let z = &l_inv_t * &w;

                // Partial step: largest t keeping active multipliers ≥ 0.
                let mut t1 = f64::INFINITY;
                let mut drop_k = None;
                for (k, (&uk, &rk)) in u.iter().zip(r.iter()).enumerate() {
                    if rk > 0.0 {
                        let t = uk / rk;
                        if t < t1 {
                            t1 = t;
                            drop_k = Some(k);
                        }
                    }
                }

                let dependent = w.norm() <= 1e-12 * v.norm().max(1.0);
                if dependent {
                    match drop_k {
                        None => {
                            let mut y = DVector::zeros(m);
                            y[pidx] = 1.0;
                            for (&j, &rk) in active.iter().zip(r.iter()) {
                                y[j] = -rk;
                            }
                            return Ok(finish(x, active, u, QpStatus::Infeasible, iterations, Some(y)));
                        }
                        Some(k) => {
                            for (uk, rk) in u.iter_mut().zip(r.iter()) {
                                *uk -= t1 * rk;
                            }
                            u_p += t1;
                            active.remove(k);
                            u.remove(k);
                            continue;
                        }
                    }
                }

                let s_p = b[pidx] - a.row(pidx).dot(&x.transpose());
                let t2 = -s_p / w.norm_squared();
                let t = t1.min(t2);
                x += &z * t;
                for (uk, rk) in u.iter_mut().zip(r.iter()) {
                    *uk -= t * rk;
                }
                u_p += t;
                if t2 <= t1 {
                    active.push(pidx);
                    u.push(u_p);
                    break;
                }
                let k = drop_k.expect("finite t1 has an index");
                active.remove(k);
                u.remove(k);
            }
        }
    }

    /// Exact solve of the equality-constrained problem on the final active set.
    #[allow(clippy::too_many_arguments)]
    fn polish<F>(
        &self,
        p: &QpProblem,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        l_inv: &DMatrix<f64>,
        x: DVector<f64>,
        active: Vec<usize>,
        u: Vec<f64>,
        iterations: usize,
        finish: F,
    ) -> QpSolution
    where
        F: Fn(DVector<f64>, Vec<usize>, Vec<f64>, QpStatus, usize, Option<DVector<f64>>) -> QpSolution,
    {
        let mut xp = x.clone();
        let mut up = u.clone();
        if !active.is_empty() {
            // Hx + g + Nλ = 0, Nᵀx = e with N columns the active a_j.
            let q = active.len();
            let mut n_mat = DMatrix::zeros(p.num_vars(), q);
            let mut e = DVector::zeros(q);
            for (k, &j) in active.iter().enumerate() {
                n_mat.set_column(k, &a.row(j).transpose());
                e[k] = b[j];
            }
            let bmat = l_inv * &n_mat;
            let qr = bmat.qr();
            let (q1, r) = (qr.q(), qr.r());
            let w = l_inv * &p.linear;
            if let Some(rt_inv_e) = r.transpose().solve_lower_triangular(&e) {
                let rhs = -(q1.transpose() * &w) - rt_inv_e;
                if let Some(lambda) = r.solve_upper_triangular(&rhs) {
                    let cand = -chol.solve(&(&p.linear + &n_mat * &lambda));
                    if cand.iter().all(|v| v.is_finite()) && lambda.iter().all(|v| v.is_finite()) {
                        xp = cand;
                        up = lambda.iter().copied().collect();
                    }
                }
            }
        } else {
            xp = -chol.solve(&p.linear);
        }
        let sol = finish(xp, active.clone(), up, QpStatus::Solved, iterations, None);
        if sol.kkt.max() < self.tol {
            return sol;
        }
        let raw = finish(x, active, u, QpStatus::Solved, iterations, None);
        let mut best = if raw.kkt.max() < sol.kkt.max() { raw } else { sol };
        if best.kkt.max() >= self.tol {
            best.status = QpStatus::Inaccurate;
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_projection() {
        let u_nom = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let p = QpProblem::unconstrained(DMatrix::identity(3, 3), -&u_nom);
        let sol = QpSolver::default().solve(&p).unwrap();
        assert!(sol.is_solved());
        assert_relative_eq!(sol.x, u_nom, epsilon = 1e-14);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn single_clamp() {
        // min ½(x−1)² s.t. x ≤ 0
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
        );
        let sol = QpSolver::default().solve(&p).unwrap();
        assert!(sol.is_solved());
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-15);
        assert_eq!(sol.active_set, vec![0]);
        assert_relative_eq!(sol.multipliers[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn lower_bounds_enforced() {
        // min ½‖x − (−1, 2)‖² with x₀ ≥ 0
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, -2.0]))
            .with_lower_bounds(vec![Some(0.0), None]);
        let sol = QpSolver::default().solve(&p).unwrap();
        assert!(sol.is_solved());
        assert_relative_eq!(sol.x, DVector::from_vec(vec![0.0, 2.0]), epsilon = 1e-14);
    }

    #[test]
    fn detects_infeasible_with_certificate() {
        // x ≤ −1 and −x ≤ −1 (x ≥ 1)
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        );
        let sol = QpSolver::default().solve(&p).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        let y = sol.farkas.unwrap();
        assert!(y.iter().all(|&v| v >= 0.0));
        assert!((p.a.transpose() * &y).amax() < 1e-12);
        assert!(p.b.dot(&y) < 0.0);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(QpSolver::default().solve(&QpProblem::unconstrained(h, DVector::zeros(2))).is_err());
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QpSolver::default().solve(&QpProblem::unconstrained(h, DVector::zeros(2))).is_err());
    }

    #[test]
    fn max_iter_reported() {
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, -1.0]),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
        );
        let sol = QpSolver::new(1e-9, 1).solve(&p).unwrap();
        assert_eq!(sol.status, QpStatus::MaxIter);
    }

    #[test]
    fn redundant_rows_are_handled() {
        // Same constraint twice, plus a scaled copy.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 2.0]);
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![-2.0, -2.0]), a, b);
        let sol = QpSolver::default().solve(&p).unwrap();
        assert!(sol.is_solved(), "{:?}", sol.kkt);
        assert_relative_eq!(sol.x, DVector::from_vec(vec![0.5, 0.5]), epsilon = 1e-12);
    }

    #[test]
    fn json_dump_round_trip() {
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DVector::from_element(1, 0.5),
        )
        .with_lower_bounds(vec![None, Some(0.0)]);
        let s = serde_json::to_string(&p).unwrap();
        let back: QpProblem = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }
}
