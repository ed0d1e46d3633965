use hri_shield::kinematics::{pseudoinverse, DhLink, JointVector, KinematicChain, Pose};
use hri_testkit::{dh_forward, fd_jacobian};
use nalgebra::{Matrix3, Matrix6, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn joints() -> impl Strategy<Value = JointVector> {
    proptest::array::uniform6(-2.0 * std::f64::consts::PI..2.0 * std::f64::consts::PI).prop_map(JointVector::from)
}

fn offset_chain() -> KinematicChain {
    let links = [
        DhLink::new(0.05, 1.2, 0.2, 0.3),
        DhLink::new(-0.4, 0.1, 0.02, -0.5),
        DhLink::new(-0.35, -0.3, 0.0, 0.0),
        DhLink::new(0.0, 1.5, 0.11, 0.2),
        DhLink::new(0.01, -1.57, 0.1, 0.0),
        DhLink::new(0.0, 0.0, 0.09, 0.7),
    ];
    let base =
        Pose::new(Vector3::new(0.1, -0.2, 0.3), nalgebra::Rotation3::from_euler_angles(0.2, -0.1, 0.4).into_inner());
    KinematicChain::new(&links, base).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn forward_kinematics_matches_elementary_transforms(q in joints()) {
        for chain in [KinematicChain::default(), offset_chain()] {
            let expected = dh_forward(chain.links(), &chain.base().to_homogeneous(), q.as_slice());
            let got = chain.forward_kinematics(&q).to_homogeneous();
            prop_assert!((got - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(q in joints()) {
        for chain in [KinematicChain::default(), offset_chain()] {
            let fd = fd_jacobian(chain.links(), &chain.base().to_homogeneous(), q.as_slice(), 1e-6);
            let j = chain.jacobian(&q);
            prop_assert!((j.0 - fd).amax() < 1e-7, "max diff {}", (j.0 - fd).amax());
        }
    }

    #[test]
    fn pose_and_jacobian_agree_with_separate_calls(q in joints()) {
        let chain = KinematicChain::default();
        let (pose, j) = chain.pose_and_jacobian(&q);
        prop_assert_eq!(pose, chain.forward_kinematics(&q));
        prop_assert_eq!(j, chain.jacobian(&q));
    }
}

#[test]
fn rotations_stay_orthonormal() {
    let chain = KinematicChain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let q = JointVector::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let r = chain.forward_kinematics(&q).rotation;
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn undamped_inverse_of_rank_deficient_matrix_matches_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for rank in [3usize, 4, 5] {
        let a = nalgebra::DMatrix::from_fn(6, rank, |_, _| rng.random_range(-1.0..1.0));
        let b = nalgebra::DMatrix::from_fn(rank, 6, |_, _| rng.random_range(-1.0..1.0));
        let j = Matrix6::from_iterator((a * b).iter().copied());
        let pinv = pseudoinverse(&j, 0.0);
        // Moore–Penrose conditions.
        assert!((j * pinv * j - j).amax() < 1e-9);
        assert!((pinv * j * pinv - pinv).amax() < 1e-9);
        assert!(((j * pinv).transpose() - j * pinv).amax() < 1e-9);
        assert!(((pinv * j).transpose() - pinv * j).amax() < 1e-9);
    }
}

#[test]
fn damped_inverse_is_bounded_at_wrist_singularity() {
    let chain = KinematicChain::default();
    // q₅ = 0 aligns the fourth and sixth joint axes.
    let q = JointVector::new(0.3, -1.2, 1.5, -0.8, 0.0, 0.4);
    let j = chain.jacobian(&q).0;
    let s_min = j.svd(false, false).singular_values.min();
    assert!(s_min < 1e-9);
    for lambda in [0.01, 0.05, 0.2] {
        let pinv = pseudoinverse(&j, lambda);
        let norm = pinv.svd(false, false).singular_values.max();
        assert!(norm <= 1.0 / (2.0 * lambda) + 1e-9, "λ = {lambda}: ‖J⁺‖ = {norm}");
    }
}

#[test]
fn full_rank_inverse_reproduces_twist() {
    let chain = KinematicChain::default();
    let q = JointVector::new(0.1, -1.0, 1.4, -1.9, -1.5, 0.2);
    let j = chain.jacobian(&q).0;
    let twist = nalgebra::Vector6::new(0.01, -0.02, 0.005, 0.01, 0.0, -0.01);
    let u = pseudoinverse(&j, 0.0) * twist;
    assert!((j * u - twist).norm() < 1e-8);
}
