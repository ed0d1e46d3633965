//! Slow, direct reference implementations for cross-checking the library.
//!
//! Nothing here shares code paths with the solver, the kinematics or the
//! filters it checks, apart from the public data types.

use hri_shield::forecast::loss::LossGradient;
use hri_shield::forecast::GaussianForecast;
use hri_shield::kinematics::DhLink;
use hri_shield::qp::QpProblem;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use rand::Rng;

/// Exhaustive active-set QP solver: tries every subset of inequality rows as
/// equalities and keeps the best feasible stationary point.
///
/// Exponential in the row count, so only usable for small problems. Returns
/// `None` when no feasible candidate exists.
pub fn qp_enumerate(p: &QpProblem, feas_tol: f64) -> Option<(DVector<f64>, f64)> {
    let (a, b) = p.expanded_rows();
    let (m, n) = (a.nrows(), p.num_vars());
    assert!(m <= 20, "enumeration oracle is limited to 20 rows");
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        for i in 0..n {
            rhs[i] = -p.linear[i];
        }
        for (j, &r) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + j, c)] = a[(r, c)];
                kkt[(c, n + j)] = a[(r, c)];
            }
            rhs[n + j] = b[r];
        }
        let Some(sol) = kkt.full_piv_lu().solve(&rhs) else { continue };
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let viol = (&a * &x - &b).iter().fold(0.0f64, |acc, v| acc.max(*v));
        if viol > feas_tol {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
            best = Some((x, f));
        }
    }
    best
}

/// Random strictly convex QP with a known feasible point.
///
/// `H = MᵀM + εI`, rows and gradient uniform in [−1, 1], and `b = A x₀ + s`
/// with `s ≥ 0` so that `x₀` is feasible. Roughly a third of the slacks are
/// zero so some constraints are active at `x₀`.
pub fn random_feasible_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> QpProblem {
    let uni = |rng: &mut R| rng.random_range(-1.0..1.0);
    let mf = DMatrix::from_fn(n, n, |_, _| uni(rng));
    let hessian = mf.transpose() * &mf + DMatrix::identity(n, n) * 0.1;
    let linear = DVector::from_fn(n, |_, _| uni(rng) * 2.0);
    let a = DMatrix::from_fn(m, n, |_, _| uni(rng));
    let x0 = DVector::from_fn(n, |_, _| uni(rng) * 0.5);
    let ax0 = &a * &x0;
    let b = DVector::from_fn(m, |i, _| {
        let s = if rng.random_bool(0.33) { 0.0 } else { rng.random_range(0.0..1.0) };
        ax0[i] + s
    });
    QpProblem::new(hessian, linear, a, b)
}

fn rot_z(theta: f64) -> Matrix4<f64> {
    let (s, c) = theta.sin_cos();
    let mut m = Matrix4::identity();
    m[(0, 0)] = c;
    m[(0, 1)] = -s;
    m[(1, 0)] = s;
    m[(1, 1)] = c;
    m
}

fn rot_x(alpha: f64) -> Matrix4<f64> {
    let (s, c) = alpha.sin_cos();
    let mut m = Matrix4::identity();
    m[(1, 1)] = c;
    m[(1, 2)] = -s;
    m[(2, 1)] = s;
    m[(2, 2)] = c;
    m
}

fn trans(x: f64, y: f64, z: f64) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(0, 3)] = x;
    m[(1, 3)] = y;
    m[(2, 3)] = z;
    m
}

/// Standard DH forward kinematics as the product `Rz(θ) Tz(d) Tx(a) Rx(α)`.
pub fn dh_forward(links: &[DhLink], base: &Matrix4<f64>, q: &[f64]) -> Matrix4<f64> {
    links.iter().zip(q).fold(*base, |t, (l, qi)| {
        t * rot_z(qi + l.theta0) * trans(0.0, 0.0, l.d) * trans(l.a, 0.0, 0.0) * rot_x(l.alpha)
    })
}

/// Central-difference geometric Jacobian of [`dh_forward`]: linear rows from
/// the position, angular rows from `vee(Ṙ Rᵀ)`.
pub fn fd_jacobian(links: &[DhLink], base: &Matrix4<f64>, q: &[f64], eps: f64) -> Matrix6<f64> {
    let mut j = Matrix6::zeros();
    for i in 0..q.len() {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[i] += eps;
        qm[i] -= eps;
        let (tp, tm) = (dh_forward(links, base, &qp), dh_forward(links, base, &qm));
        let t0 = dh_forward(links, base, q);
        let dp = (tp.fixed_view::<3, 1>(0, 3) - tm.fixed_view::<3, 1>(0, 3)) / (2.0 * eps);
        let dr: Matrix3<f64> = (tp.fixed_view::<3, 3>(0, 0) - tm.fixed_view::<3, 3>(0, 0)) / (2.0 * eps);
        let w = dr * t0.fixed_view::<3, 3>(0, 0).transpose();
        let col = Vector6::new(
            dp[0],
            dp[1],
            dp[2],
            0.5 * (w[(2, 1)] - w[(1, 2)]),
            0.5 * (w[(0, 2)] - w[(2, 0)]),
            0.5 * (w[(1, 0)] - w[(0, 1)]),
        );
        j.set_column(i, &col);
    }
    j
}

/// Central-difference gradient of a scalar function of a 3-vector.
pub fn fd_gradient3<F: Fn(&Vector3<f64>) -> f64>(f: F, x: &Vector3<f64>, eps: f64) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let mut e = Vector3::zeros();
        e[i] = eps;
        (f(&(x + e)) - f(&(x - e))) / (2.0 * eps)
    })
}

/// Joint 3-D constant-velocity Kalman filter written out with full 6×6
/// matrices. State `[p; v]`, position measurements, two-point start.
/// Returns predicted means and position variances for `horizon` steps.
pub fn kalman_reference(
    z: &[Vector3<f64>],
    dt: f64,
    q: f64,
    r: f64,
    horizon: usize,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    assert!(z.len() >= 2);
    let i3 = Matrix3::identity();
    let mut f = Matrix6::identity();
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * dt));
    let mut qm = Matrix6::zeros();
    qm.fixed_view_mut::<3, 3>(0, 0).copy_from(&(i3 * (q * dt.powi(3) / 3.0)));
    qm.fixed_view_mut::<3, 3>(0, 3).copy_from(&(i3 * (q * dt * dt / 2.0)));
    qm.fixed_view_mut::<3, 3>(3, 0).copy_from(&(i3 * (q * dt * dt / 2.0)));
    qm.fixed_view_mut::<3, 3>(3, 3).copy_from(&(i3 * (q * dt)));
    let mut hm = nalgebra::Matrix3x6::zeros();
    hm.fixed_view_mut::<3, 3>(0, 0).copy_from(&i3);
    let rm = i3 * (r * r);

    let v0 = (z[1] - z[0]) / dt;
    let mut x = Vector6::new(z[1][0], z[1][1], z[1][2], v0[0], v0[1], v0[2]);
    // Covariance of (z₁, (z₁ − z₀)/dt) for independent measurement errors.
    let mut p = Matrix6::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&rm);
    p.fixed_view_mut::<3, 3>(0, 3).copy_from(&(rm / dt));
    p.fixed_view_mut::<3, 3>(3, 0).copy_from(&(rm / dt));
    p.fixed_view_mut::<3, 3>(3, 3).copy_from(&(rm * (2.0 / (dt * dt))));

    for zi in &z[2..] {
        x = f * x;
        p = f * p * f.transpose() + qm;
        let s = hm * p * hm.transpose() + rm;
        let k = p * hm.transpose() * s.try_inverse().expect("innovation covariance is invertible");
        x += k * (zi - hm * x);
        p = (Matrix6::identity() - k * hm) * p;
    }
    let mut mu = Vec::with_capacity(horizon);
    let mut var = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        x = f * x;
        p = f * p * f.transpose() + qm;
        mu.push(Vector3::new(x[0], x[1], x[2]));
        var.push(Vector3::new(p[(0, 0)], p[(1, 1)], p[(2, 2)]));
    }
    (mu, var)
}

/// Pure mean-squared-error sequence loss `ω/T Σ‖μ_k − y_k‖²` and its
/// gradient, scaled by `1/batch`. The variance head gets no gradient.
pub fn mse_loss(f: &GaussianForecast, truth: &[Vector3<f64>], omega: f64, batch: usize) -> LossGradient {
    let inv_b = 1.0 / batch as f64;
    let t_out = truth.len() as f64;
    let mut sq = 0.0;
    let d_mu =
        f.mu.iter()
            .zip(truth)
            .map(|(m, y)| {
                let r = m - y;
                sq += r.norm_squared();
                // Same association order as the training loss so results can be
                // compared bit for bit.
                r.map(|rc| inv_b * (2.0 * omega * rc / t_out))
            })
            .collect();
    LossGradient { value: inv_b * (omega * sq / t_out), d_mu, d_log_var: vec![Vector3::zeros(); truth.len()] }
}
