use hri_shield::barrier::{
    assemble_constraints, build_qp, predictive_rollout, ConstantPolicy, Method, SafetyConfig, SafetyFilter, Slack,
};
use hri_shield::forecast::GaussianForecast;
use hri_shield::geometry::{separation_from_point, LinkCylinder};
use hri_shield::kinematics::{JointVector, KinematicChain};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 1.0 / 30.0;

fn home() -> JointVector {
    JointVector::new(0.0, -1.2, 1.6, -1.97, -1.57, 0.0)
}

struct State {
    q: JointVector,
    u: JointVector,
    hand: Vector3<f64>,
    forecast: GaussianForecast,
}

fn random_state(rng: &mut ChaCha8Rng, chain: &KinematicChain, horizon: usize) -> State {
    let q = home() + JointVector::from_fn(|_, _| rng.random_range(-0.4..0.4));
    let u = JointVector::from_fn(|_, _| rng.random_range(-0.5..0.5));
    let tcp = chain.forward_kinematics(&q).position;
    let hand = tcp + Vector3::from_fn(|_, _| rng.random_range(-0.25..0.25));
    let v = Vector3::from_fn(|_, _| rng.random_range(-0.6..0.6));
    let mut p = hand;
    let mut mu = Vec::with_capacity(horizon);
    let mut log_var = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        p += v * DT + Vector3::from_fn(|_, _| rng.random_range(-0.003..0.003));
        mu.push(p);
        log_var.push(Vector3::from_fn(|_, _| rng.random_range(-12.0..-3.0)));
    }
    State { q, u, hand, forecast: GaussianForecast { mu, log_var, dt: DT } }
}

fn cfg(method: Method, gamma: f64) -> SafetyConfig {
    SafetyConfig { method, gamma, ..Default::default() }
}

fn h_at(chain: &KinematicChain, q: &JointVector, hand: &Vector3<f64>, c: &SafetyConfig) -> f64 {
    let tcp = chain.forward_kinematics(q);
    let d = separation_from_point(hand, &LinkCylinder::attached_to_tcp(&tcp, c.h_cyl, c.r_cyl)).distance;
    c.d_min - d
}

#[test]
fn lie_derivatives_match_finite_differences() {
    let chain = KinematicChain::default();
    let c = cfg(Method::Cbf, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let s = random_state(&mut rng, &chain, c.horizon);
        let r = predictive_rollout(&chain, &s.q, 0.0, &ConstantPolicy(s.u), &s.hand, None, &c).unwrap();
        let e = &r.evals[0];
        assert!((e.h - h_at(&chain, &s.q, &s.hand, &c)).abs() < 1e-12);
        let eps = 1e-6;
        let fd_q = (h_at(&chain, &(s.q + s.u * eps), &s.hand, &c) - h_at(&chain, &(s.q - s.u * eps), &s.hand, &c))
            / (2.0 * eps);
        assert!((fd_q - e.grad_q.dot(&s.u)).abs() < 1e-4, "L_g h: {fd_q} vs {}", e.grad_q.dot(&s.u));
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let fd_o =
            (h_at(&chain, &s.q, &(s.hand + v * eps), &c) - h_at(&chain, &s.q, &(s.hand - v * eps), &c)) / (2.0 * eps);
        assert!((fd_o + e.u_hat.dot(&v)).abs() < 1e-4);
    }
}

#[test]
fn earliest_violation_matches_scan_of_independent_barrier() {
    let chain = KinematicChain::default();
    let c = cfg(Method::Pcbf, 0.0);
    let tcp = chain.forward_kinematics(&home()).position;
    // Hand starts 0.4 m away and closes in on the TCP at 0.5 m/s.
    let dir = Vector3::new(1.0, 0.5, 0.2).normalize();
    let start = tcp + dir * 0.4;
    let mu: Vec<_> = (1..=c.horizon).map(|k| start - dir * (0.5 * k as f64 * DT)).collect();
    let f = GaussianForecast::deterministic(mu.clone(), DT);
    let r =
        predictive_rollout(&chain, &home(), 2.0, &ConstantPolicy(JointVector::zeros()), &start, Some(&f), &c).unwrap();
    let first = std::iter::once(start).chain(mu).position(|p| h_at(&chain, &home(), &p, &c) > 0.0).unwrap();
    assert!(first > 0 && first < c.horizon);
    assert!((r.earliest_violation - (2.0 + first as f64 * DT)).abs() < 1e-12);

    let far = GaussianForecast::deterministic(vec![tcp + Vector3::new(1.0, 0.0, 0.0); c.horizon], DT);
    let r = predictive_rollout(&chain, &home(), 2.0, &ConstantPolicy(JointVector::zeros()), &far.mu[0], Some(&far), &c)
        .unwrap();
    assert!(r.evals.iter().all(|e| e.h < 0.0));
    assert!((r.earliest_violation - (2.0 + c.horizon as f64 * DT)).abs() < 1e-12);
}

#[test]
fn gamma_zero_reproduces_predictive_rows_bitwise() {
    let chain = KinematicChain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pcbf = cfg(Method::Pcbf, 0.0);
    let ua = SafetyConfig { lambda_p_equals_lambda_r: true, ..cfg(Method::UaPcbf, 0.0) };
    for _ in 0..100 {
        let s = random_state(&mut rng, &chain, pcbf.horizon);
        let p = ConstantPolicy(s.u);
        let ra = predictive_rollout(&chain, &s.q, 1.0, &p, &s.hand, Some(&s.forecast), &pcbf).unwrap();
        let rb = predictive_rollout(&chain, &s.q, 1.0, &p, &s.hand, Some(&s.forecast), &ua).unwrap();
        let ha: Vec<f64> = ra.evals.iter().map(|e| e.h).collect();
        let hb: Vec<f64> = rb.evals.iter().map(|e| e.h).collect();
        assert_eq!(ha, hb);
        let (ca, cb) = (assemble_constraints(&ra, &pcbf), assemble_constraints(&rb, &ua));
        assert_eq!(ca.rows, cb.rows);
        assert_eq!(ca.lambda_p.to_bits(), cb.lambda_p.to_bits());
    }
}

#[test]
fn static_forecast_reactive_row_is_the_cbf_row() {
    let chain = KinematicChain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let s = random_state(&mut rng, &chain, 30);
        let still = GaussianForecast::deterministic(vec![s.hand; 30], DT);
        let p = ConstantPolicy(s.u);
        let cbf = cfg(Method::Cbf, 0.0);
        let pcbf = cfg(Method::Pcbf, 0.0);
        let rc = predictive_rollout(&chain, &s.q, 0.0, &p, &s.hand, None, &cbf).unwrap();
        let rp = predictive_rollout(&chain, &s.q, 0.0, &p, &s.hand, Some(&still), &pcbf).unwrap();
        let cc = assemble_constraints(&rc, &cbf);
        let cp = assemble_constraints(&rp, &pcbf);
        assert_eq!(cc.rows.len(), 1);
        let reactive: Vec<_> = cp.rows.iter().filter(|r| r.slack == Slack::Reactive).cloned().collect();
        assert_eq!(cc.rows, reactive);
    }
}

#[test]
fn inactive_rows_leave_nominal_command_unchanged() {
    let chain = KinematicChain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    for _ in 0..300 {
        let s = random_state(&mut rng, &chain, 30);
        let c = cfg(Method::UaPcbf, 5.0);
        let r = predictive_rollout(&chain, &s.q, 0.0, &ConstantPolicy(s.u), &s.hand, Some(&s.forecast), &c).unwrap();
        let set = assemble_constraints(&r, &c);
        let qp = build_qp(&r.u_nom, &set, &c);
        let mut x = nalgebra::DVector::zeros(8);
        x.rows_mut(0, 6).copy_from(&r.u_nom);
        if (&qp.a * &x - &qp.b).iter().any(|v| *v >= 0.0) {
            continue;
        }
        checked += 1;
        let mut filter = SafetyFilter::new(chain.clone(), c).unwrap();
        let out = filter.filter(0.0, &s.q, &ConstantPolicy(s.u), &s.hand, Some(&s.forecast)).unwrap();
        assert_eq!(out.u_safe, out.u_nom);
        assert_eq!((out.delta_r, out.delta_p), (0.0, 0.0));
    }
    assert!(checked > 50, "only {checked} inactive cases");
}

#[test]
fn oracle_approach_satisfies_continuous_time_condition() {
    let chain = KinematicChain::default();
    let c = cfg(Method::UaPcbf, 5.0);
    let mut filter = SafetyFilter::new(chain.clone(), c.clone()).unwrap();
    let mut q = home();
    let tcp = chain.forward_kinematics(&q).position;
    let dir = Vector3::new(1.0, 0.3, 0.4).normalize();
    let v_hand = -dir * 0.2;
    let hand_at = |t: f64| tcp + dir * 0.18 + v_hand * t;
    let policy = ConstantPolicy(JointVector::zeros());
    for step in 0..60 {
        let t = step as f64 * DT;
        let hand = hand_at(t);
        let mu: Vec<_> = (1..=c.horizon).map(|k| hand_at(t + k as f64 * DT)).collect();
        let f = GaussianForecast::deterministic(mu, DT);
        let out = filter.filter(t, &q, &policy, &hand, Some(&f)).unwrap();
        assert!(!out.degraded);
        assert_eq!(out.delta_r, 0.0, "step {step}");
        let h = h_at(&chain, &q, &hand, &c);
        let eps = 1e-6;
        let h_dot = (h_at(&chain, &(q + out.u_safe * eps), &(hand + v_hand * eps), &c)
            - h_at(&chain, &(q - out.u_safe * eps), &(hand - v_hand * eps), &c))
            / (2.0 * eps);
        assert!(h_dot + c.alpha_gain * h <= 1e-6, "step {step}: {}", h_dot + c.alpha_gain * h);
        q += out.u_safe * DT;
    }
}

#[test]
fn filter_is_deterministic() {
    let chain = KinematicChain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_state(&mut rng, &chain, 30);
    let run = || {
        let mut f = SafetyFilter::new(chain.clone(), cfg(Method::UaPcbf, 5.0)).unwrap();
        f.filter(0.0, &s.q, &ConstantPolicy(s.u), &s.hand, Some(&s.forecast)).unwrap()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sigma_bar_and_lambda_p_stay_in_range(seed in any::<u64>(), gamma in 0.0f64..20.0, half in any::<bool>()) {
        let chain = KinematicChain::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(&mut rng, &chain, 30);
        let c = SafetyConfig { use_paper_half_exp: half, ..cfg(Method::UaPcbf, gamma) };
        let r = predictive_rollout(&chain, &s.q, 0.0, &ConstantPolicy(s.u), &s.hand, Some(&s.forecast), &c).unwrap();
        prop_assert_eq!(r.evals[0].sigma_bar, 0.0);
        for e in &r.evals {
            prop_assert!(e.sigma_bar >= 0.0 && e.sigma_bar <= c.d_min);
        }
        let set = assemble_constraints(&r, &c);
        prop_assert!(set.lambda_p >= c.lambda_r - gamma && set.lambda_p <= c.lambda_r);
    }

    #[test]
    fn filter_output_is_finite_and_within_speed_limit(seed in any::<u64>()) {
        let chain = KinematicChain::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(&mut rng, &chain, 30);
        let mut f = SafetyFilter::new(chain, cfg(Method::UaPcbf, 5.0)).unwrap();
        let out = f.filter(0.0, &s.q, &ConstantPolicy(s.u), &s.hand, Some(&s.forecast)).unwrap();
        prop_assert!(!out.degraded);
        prop_assert!(out.u_safe.iter().all(|v| v.is_finite() && v.abs() <= 1.5 + 1e-9));
        prop_assert!(out.delta_r >= 0.0 && out.delta_p >= 0.0);
    }
}
