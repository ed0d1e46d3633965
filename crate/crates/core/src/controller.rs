//! Proportional task-space velocity controller.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{pseudoinverse, Jacobian, JointVector, Pose};

/// Gain given either as one value for all axes or per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Scalar(f64),
    PerAxis([f64; 3]),
}

impl Gain {
    pub fn as_vector(&self) -> Vector3<f64> {
        match *self {
            Gain::Scalar(k) => Vector3::repeat(k),
            Gain::PerAxis(k) => Vector3::from(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainConfig {
    pub k_p: Gain,
    pub k_r: Gain,
    /// Per-joint speed clamp (rad/s).
    pub max_joint_speed: f64,
    /// Damping of the pseudoinverse used to map twists to joint rates.
    pub damping: f64,
    /// Below this smallest singular value the damping ramps up towards
    /// `max_damping`; 0 disables the ramp.
    pub singular_threshold: f64,
    pub max_damping: f64,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            k_p: Gain::Scalar(2.0),
            k_r: Gain::Scalar(1.0),
            max_joint_speed: 1.5,
            damping: 1e-3,
            singular_threshold: 0.05,
            max_damping: 0.05,
        }
    }
}

impl GainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |g: &Gain| g.as_vector().iter().all(|k| *k > 0.0);
        if !positive(&self.k_p) || !positive(&self.k_r) {
            return Err(Error::Config("controller gains must be positive".into()));
        }
        if !(self.max_joint_speed > 0.0) || !(self.damping >= 0.0) {
            return Err(Error::Config("max joint speed must be positive and damping nonnegative".into()));
        }
        if !(self.singular_threshold >= 0.0) || !(self.max_damping >= self.damping) {
            return Err(Error::Config("singular threshold must be nonnegative and max_damping ≥ damping".into()));
        }
        Ok(())
    }
}

/// `½(R_d R_cᵀ − R_c R_dᵀ)^∨` in the world frame.
pub fn rotation_error(desired: &Matrix3<f64>, current: &Matrix3<f64>) -> Vector3<f64> {
    let s = (desired * current.transpose() - current * desired.transpose()) * 0.5;
    Vector3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)])
}

/// `(K_P e_p, K_r e_r)` with `e_p = p_d − p_c`.
pub fn nominal_twist(current: &Pose, desired: &Pose, g: &GainConfig) -> Vector6<f64> {
    let v = g.k_p.as_vector().component_mul(&(desired.position - current.position));
    let w = g.k_r.as_vector().component_mul(&rotation_error(&desired.rotation, &current.rotation));
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

/// Damping for `j`: `g.damping` away from singularities, rising
/// quadratically to `g.max_damping` as the smallest singular value drops
/// below `g.singular_threshold`.
pub fn adaptive_damping(j: &Jacobian, g: &GainConfig) -> f64 {
    if g.singular_threshold <= 0.0 {
        return g.damping;
    }
    let s_min = j.matrix().singular_values().min();
    if s_min >= g.singular_threshold {
        return g.damping;
    }
    let r = s_min / g.singular_threshold;
    (g.damping.powi(2) + (g.max_damping.powi(2) - g.damping.powi(2)) * (1.0 - r * r)).sqrt()
}

/// `J⁺ twist`, then clamped per joint to `max_joint_speed`.
pub fn nominal_joint_velocity(twist: &Vector6<f64>, j: &Jacobian, g: &GainConfig) -> JointVector {
    let u = pseudoinverse(j.matrix(), adaptive_damping(j, g)) * twist;
    u.map(|v| v.clamp(-g.max_joint_speed, g.max_joint_speed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::axis_angle;
    use approx::assert_relative_eq;
    use nalgebra::Matrix6;

    #[test]
    fn zero_error_zero_twist() {
        let p = Pose::new(Vector3::new(0.3, 0.1, 0.2), axis_angle(&Vector3::y(), 0.4));
        assert_eq!(nominal_twist(&p, &p, &GainConfig::default()), Vector6::zeros());
    }

    #[test]
    fn pure_translation() {
        let g = GainConfig { k_p: Gain::Scalar(1.0), ..Default::default() };
        let desired = Pose::new(Vector3::new(0.1, 0.0, 0.0), Matrix3::identity());
        let t = nominal_twist(&Pose::identity(), &desired, &g);
        assert_relative_eq!(t, Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn rotation_about_z() {
        let e = rotation_error(&axis_angle(&Vector3::z(), 0.3), &Matrix3::identity());
        assert_relative_eq!(e, Vector3::new(0.0, 0.0, 0.3f64.sin()), epsilon = 1e-15);
    }

    #[test]
    fn rotation_error_is_antisymmetric() {
        let a = axis_angle(&Vector3::new(1.0, 2.0, 0.5).normalize(), 0.7);
        let b = axis_angle(&Vector3::new(-0.3, 0.2, 1.0).normalize(), -1.1);
        assert_relative_eq!(rotation_error(&a, &b), -rotation_error(&b, &a), epsilon = 1e-15);
    }

    #[test]
    fn identity_jacobian_passes_twist_through() {
        let g = GainConfig { damping: 0.0, ..Default::default() };
        let t = Vector6::new(0.1, -0.2, 0.3, 0.05, 0.0, -0.1);
        assert_relative_eq!(nominal_joint_velocity(&t, &Jacobian(Matrix6::identity()), &g), t, epsilon = 1e-12);
    }

    #[test]
    fn clamp_applies_after_mapping() {
        let g = GainConfig::default();
        let t = Vector6::new(5.0, -9.0, 0.3, 2.0, 0.0, -3.0);
        let u = nominal_joint_velocity(&t, &Jacobian(Matrix6::identity()), &g);
        assert!(u.iter().all(|v| v.abs() <= g.max_joint_speed));
        assert_relative_eq!(u[2], 0.3 / (1.0 + 1e-6), epsilon = 1e-12);
    }

    #[test]
    fn damping_ramps_near_singularity() {
        let g = GainConfig::default();
        assert_eq!(adaptive_damping(&Jacobian(Matrix6::identity()), &g), g.damping);
        let singular = Jacobian(Matrix6::from_diagonal(&Vector6::new(1.0, 1.0, 1.0, 1.0, 1.0, 0.0)));
        assert_relative_eq!(adaptive_damping(&singular, &g), g.max_damping, epsilon = 1e-12);
        let near = Jacobian(Matrix6::from_diagonal(&Vector6::new(1.0, 1.0, 1.0, 1.0, 1.0, 0.025)));
        let d = adaptive_damping(&near, &g);
        assert!(d > g.damping && d < g.max_damping);
    }

    #[test]
    fn gain_json_accepts_scalar_or_vector() {
        let g: GainConfig = serde_json::from_str(r#"{"k_p": [1.0, 2.0, 3.0], "k_r": 0.5}"#).unwrap();
        assert_eq!(g.k_p.as_vector(), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(g.k_r, Gain::Scalar(0.5));
        assert_eq!(g.max_joint_speed, 1.5);
    }
}
