//! Serial 6R arm kinematics: forward kinematics, geometric Jacobian and
//! (damped) pseudoinverse.
//!
//! Links follow the standard Denavit–Hartenberg convention, each joint
//! contributing `Rz(q + theta0) · Tz(d) · Tx(a) · Rx(alpha)`.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint angles in radians. Unbounded, never wrapped.
pub type JointVector = Vector6<f64>;

pub const NUM_JOINTS: usize = 6;

/// Standard DH parameters of one revolute joint, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhLink {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta0: f64,
}

impl DhLink {
    pub const fn new(a: f64, alpha: f64, d: f64, theta0: f64) -> Self {
        Self { a, alpha, d, theta0 }
    }

    fn transform(&self, q: f64) -> Matrix4<f64> {
        let (st, ct) = (q + self.theta0).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct,
            -st * ca,
            st * sa,
            self.a * ct,
            st,
            ct * ca,
            -ct * sa,
            self.a * st,
            0.0,
            sa,
            ca,
            self.d,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }

    fn is_finite(&self) -> bool {
        self.a.is_finite() && self.alpha.is_finite() && self.d.is_finite() && self.theta0.is_finite()
    }
}

/// Rigid transform: position in meters plus a proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), rotation: Matrix3::identity() }
    }

    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Self { position, rotation }
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self { position: m.fixed_view::<3, 1>(0, 3).into_owned(), rotation: m.fixed_view::<3, 3>(0, 0).into_owned() }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    /// Composition `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { position: self.position + self.rotation * other.position, rotation: self.rotation * other.rotation }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * p
    }

    /// Unit z axis of the frame, expressed in the parent frame.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// `‖RᵀR − I‖∞` and `|det R − 1|`, whichever is larger.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }
}

/// Geometric Jacobian of the TCP: rows 0..3 linear velocity, rows 3..6
/// angular velocity, both in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian(pub Matrix6<f64>);

impl Jacobian {
    pub fn linear(&self) -> nalgebra::Matrix3x6<f64> {
        self.0.fixed_view::<3, 6>(0, 0).into_owned()
    }

    pub fn angular(&self) -> nalgebra::Matrix3x6<f64> {
        self.0.fixed_view::<3, 6>(3, 0).into_owned()
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    links: [DhLink; NUM_JOINTS],
    #[serde(default)]
    base: Pose,
}

impl Default for KinematicChain {
    /// A ~0.95 m reach collaborative arm in UR-style DH layout.
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_2;
        Self {
            links: [
                DhLink::new(0.0, FRAC_PI_2, 0.120, 0.0),
                DhLink::new(-0.430, 0.0, 0.0, 0.0),
                DhLink::new(-0.3685, 0.0, 0.0, 0.0),
                DhLink::new(0.0, FRAC_PI_2, 0.1135, 0.0),
                DhLink::new(0.0, -FRAC_PI_2, 0.1135, 0.0),
                DhLink::new(0.0, 0.0, 0.107, 0.0),
            ],
            base: Pose::identity(),
        }
    }
}

impl KinematicChain {
    pub fn new(links: &[DhLink], base: Pose) -> Result<Self> {
        if links.len() != NUM_JOINTS {
            return Err(Error::Config(format!(
                "kinematic chain needs exactly {NUM_JOINTS} links, got {}",
                links.len()
            )));
        }
        if !links.iter().all(DhLink::is_finite) {
            return Err(Error::Config("kinematic chain has non-finite parameters".into()));
        }
        if !(base.position.iter().all(|v| v.is_finite()) && base.orthonormality_error() < 1e-9) {
            return Err(Error::Config("chain base pose is not a rigid transform".into()));
        }
        let mut arr = [DhLink::new(0.0, 0.0, 0.0, 0.0); NUM_JOINTS];
        arr.copy_from_slice(links);
        Ok(Self { links: arr, base })
    }

    pub fn links(&self) -> &[DhLink; NUM_JOINTS] {
        &self.links
    }

    pub fn base(&self) -> &Pose {
        &self.base
    }

    /// Frames `0..=6`: base, then the frame after each joint. The last one is the TCP.
    pub fn frames(&self, q: &JointVector) -> [Pose; NUM_JOINTS + 1] {
        let mut frames = [Pose::identity(); NUM_JOINTS + 1];
        let mut t = self.base.to_homogeneous();
        frames[0] = self.base;
        for (i, link) in self.links.iter().enumerate() {
            t *= link.transform(q[i]);
            frames[i + 1] = Pose::from_homogeneous(&t);
        }
        frames
    }

    pub fn forward_kinematics(&self, q: &JointVector) -> Pose {
        self.frames(q)[NUM_JOINTS]
    }

    /// Column `i` is the TCP twist produced by unit velocity of joint `i`.
    pub fn jacobian(&self, q: &JointVector) -> Jacobian {
        let frames = self.frames(q);
        self.jacobian_from_frames(&frames)
    }

    pub fn jacobian_from_frames(&self, frames: &[Pose; NUM_JOINTS + 1]) -> Jacobian {
        let tcp = frames[NUM_JOINTS].position;
        let mut j = Matrix6::zeros();
        for i in 0..NUM_JOINTS {
            let z = frames[i].z_axis();
            let lin = z.cross(&(tcp - frames[i].position));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        Jacobian(j)
    }

    /// TCP pose and Jacobian from a single pass over the chain.
    pub fn pose_and_jacobian(&self, q: &JointVector) -> (Pose, Jacobian) {
        let frames = self.frames(q);
        (frames[NUM_JOINTS], self.jacobian_from_frames(&frames))
    }
}

/// Singular values below this are treated as zero by the undamped inverse.
pub const SINGULAR_VALUE_CUTOFF: f64 = 1e-10;

/// `Jᵀ(JJᵀ + damping²I)⁻¹` for `damping > 0`; the Moore–Penrose inverse
/// (SVD, truncated at [`SINGULAR_VALUE_CUTOFF`]) for `damping == 0`.
pub fn pseudoinverse(j: &Matrix6<f64>, damping: f64) -> Matrix6<f64> {
    if damping > 0.0 {
        let jjt = j * j.transpose() + Matrix6::identity() * (damping * damping);
        // JJᵀ + λ²I is SPD for λ > 0.
        match jjt.cholesky() {
            Some(ch) => j.transpose() * ch.inverse(),
            None => svd_pinv(j),
        }
    } else {
        svd_pinv(j)
    }
}

fn svd_pinv(j: &Matrix6<f64>) -> Matrix6<f64> {
    let svd = j.svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let mut s_inv = Matrix6::zeros();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > SINGULAR_VALUE_CUTOFF {
            s_inv[(i, i)] = 1.0 / s;
        }
    }
    vt.transpose() * s_inv * u.transpose()
}

/// Rotation `R` with angle `theta` about unit `axis`.
pub fn axis_angle(axis: &Vector3<f64>, theta: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), theta).into_inner()
}

/// Damped least-squares position+orientation IK. Returns the joint vector
/// and the final position error norm.
pub fn inverse_kinematics(
    chain: &KinematicChain,
    seed: &JointVector,
    target: &Pose,
    iterations: usize,
) -> (JointVector, f64) {
    let mut q = *seed;
    let mut err = f64::INFINITY;
    for _ in 0..iterations {
        let (pose, jac) = chain.pose_and_jacobian(&q);
        let e_p = target.position - pose.position;
        let e_r = crate::controller::rotation_error(&target.rotation, &pose.rotation);
        err = e_p.norm();
        if err < 1e-10 && e_r.norm() < 1e-10 {
            break;
        }
        let mut twist = Vector6::zeros();
        twist.fixed_view_mut::<3, 1>(0, 0).copy_from(&e_p);
        twist.fixed_view_mut::<3, 1>(3, 0).copy_from(&e_r);
        q += pseudoinverse(&jac.0, 1e-3) * twist * 0.5;
    }
    (q, err)
}
