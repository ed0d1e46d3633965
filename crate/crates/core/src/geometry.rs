//! Sphere–cylinder separation between the operator's hand and the bounding
//! cylinder of the robot's last link.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Pose;

/// Below this ‖o − c‖ the interaction axis is undefined.
const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandSphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl HandSphere {
    pub fn new(center: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !center.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!("bad hand sphere (radius {radius})")));
        }
        Ok(Self { center, radius })
    }
}

/// Capped cylinder: the axis segment runs from `base` to `base + height·axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkCylinder {
    pub base: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub height: f64,
    pub radius: f64,
}

impl LinkCylinder {
    pub fn new(base: Vector3<f64>, axis: Vector3<f64>, height: f64, radius: f64) -> Result<Self> {
        if (axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("cylinder axis must be a unit vector".into()));
        }
        if !(height > 0.0 && radius > 0.0) {
            return Err(Error::InvalidInput("cylinder height and radius must be positive".into()));
        }
        Ok(Self { base, axis, height, radius })
    }

    /// Cylinder rigidly attached to the TCP frame: the axis is the TCP z axis
    /// and the segment extends `height` behind the TCP origin.
    pub fn attached_to_tcp(tcp: &Pose, height: f64, radius: f64) -> Self {
        let axis = tcp.z_axis();
        Self { base: tcp.position - axis * height, axis, height, radius }
    }

    pub fn tip(&self) -> Vector3<f64> {
        self.base + self.axis * self.height
    }

    pub fn translated(&self, delta: &Vector3<f64>) -> Self {
        Self { base: self.base + delta, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationResult {
    pub distance: f64,
    pub closest_axis_point: Vector3<f64>,
    /// Unit vector from the closest axis point toward the hand centre.
    pub u_hat: Vector3<f64>,
    pub degenerate: bool,
}

/// World +x projected onto the plane orthogonal to `axis` (+y if the axis is x).
fn fallback_direction(axis: &Vector3<f64>) -> Vector3<f64> {
    for candidate in [Vector3::x(), Vector3::y(), Vector3::z()] {
        let v = candidate - axis * axis.dot(&candidate);
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
    unreachable!("a unit axis is orthogonal to at least one world axis direction")
}

/// `d = ‖o − c‖ − r_cyl` with `c` the projection of the sphere centre onto
/// the axis segment (clamped to its ends).
pub fn separation(sphere: &HandSphere, cyl: &LinkCylinder) -> SeparationResult {
    separation_from_point(&sphere.center, cyl)
}

pub fn separation_from_point(o: &Vector3<f64>, cyl: &LinkCylinder) -> SeparationResult {
    let s = (o - cyl.base).dot(&cyl.axis).clamp(0.0, cyl.height);
    let c = cyl.base + cyl.axis * s;
    let diff = o - c;
    let n = diff.norm();
    if n < DEGENERATE_EPS {
        return SeparationResult {
            distance: n - cyl.radius,
            closest_axis_point: c,
            u_hat: fallback_direction(&cyl.axis),
            degenerate: true,
        };
    }
    SeparationResult { distance: n - cyl.radius, closest_axis_point: c, u_hat: diff / n, degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationGradient {
    pub wrt_hand: Vector3<f64>,
    pub wrt_base: Vector3<f64>,
}

/// Gradient of `d` with respect to the hand centre and to a rigid
/// translation of the cylinder.
pub fn separation_gradient(sphere: &HandSphere, cyl: &LinkCylinder) -> Result<SeparationGradient> {
    let sep = separation(sphere, cyl);
    if sep.degenerate {
        return Err(Error::DegenerateGeometry);
    }
    // Whether c is interior or clamped to a cap, (o − c) is the gradient of
    // the point-to-segment distance and c follows any rigid translation.
    Ok(SeparationGradient { wrt_hand: sep.u_hat, wrt_base: -sep.u_hat })
}

/// `uᵀ Σ u` for a diagonal covariance given by its diagonal.
pub fn project_covariance(diag: &Vector3<f64>, u_hat: &Vector3<f64>) -> f64 {
    diag.iter().zip(u_hat.iter()).map(|(s, u)| s * u * u).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn z_cyl() -> LinkCylinder {
        LinkCylinder::new(Vector3::zeros(), Vector3::z(), 0.4, 0.05).unwrap()
    }

    fn sphere(x: f64, y: f64, z: f64) -> HandSphere {
        HandSphere::new(Vector3::new(x, y, z), 0.08).unwrap()
    }

    #[test]
    fn perpendicular_offset() {
        let r = separation(&sphere(0.25, 0.0, 0.2), &z_cyl());
        assert_relative_eq!(r.closest_axis_point, Vector3::new(0.0, 0.0, 0.2), epsilon = 1e-15);
        assert_relative_eq!(r.distance, 0.20, epsilon = 1e-15);
        assert_relative_eq!(r.u_hat, Vector3::x(), epsilon = 1e-15);
        assert!(!r.degenerate);
        let g = separation_gradient(&sphere(0.25, 0.0, 0.2), &z_cyl()).unwrap();
        assert_relative_eq!(g.wrt_hand, Vector3::x(), epsilon = 1e-15);
        assert_relative_eq!(g.wrt_base, -Vector3::x(), epsilon = 1e-15);
    }

    #[test]
    fn axial_clamp_above_cap() {
        let r = separation(&sphere(0.0, 0.0, 0.6), &z_cyl());
        assert_relative_eq!(r.closest_axis_point, Vector3::new(0.0, 0.0, 0.4), epsilon = 1e-15);
        assert_relative_eq!(r.distance, 0.15, epsilon = 1e-12);
        assert_relative_eq!(r.u_hat, Vector3::z(), epsilon = 1e-15);
        let g = separation_gradient(&sphere(0.0, 0.0, 0.6), &z_cyl()).unwrap();
        assert_relative_eq!(g.wrt_hand, Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn on_axis_is_degenerate_with_fixed_fallback() {
        let r = separation(&sphere(0.0, 0.0, 0.1), &z_cyl());
        assert!(r.degenerate);
        assert_relative_eq!(r.u_hat, Vector3::x(), epsilon = 1e-15);
        assert!(separation_gradient(&sphere(0.0, 0.0, 0.1), &z_cyl()).is_err());

        let x_cyl = LinkCylinder::new(Vector3::zeros(), Vector3::x(), 0.4, 0.05).unwrap();
        let r = separation(&sphere(0.2, 0.0, 0.0), &x_cyl);
        assert!(r.degenerate);
        assert_relative_eq!(r.u_hat, Vector3::y(), epsilon = 1e-15);
        assert_relative_eq!(r.u_hat.dot(&x_cyl.axis), 0.0);
    }

    #[test]
    fn covariance_projection_cases() {
        let u = Vector3::new(1.0, 2.0, -2.0) / 3.0;
        assert_relative_eq!(project_covariance(&Vector3::repeat(0.04), &u), 0.04, epsilon = 1e-15);
        let d = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(project_covariance(&d, &Vector3::x()), 1.0);
        assert_eq!(project_covariance(&d, &Vector3::y()), 0.0);
    }

    #[test]
    fn tcp_attachment_extends_backward() {
        let tcp = Pose::new(Vector3::new(0.5, 0.0, 0.4), flip_z());
        let cyl = LinkCylinder::attached_to_tcp(&tcp, 0.15, 0.05);
        assert_relative_eq!(cyl.tip(), tcp.position, epsilon = 1e-15);
        assert_relative_eq!(cyl.base, Vector3::new(0.5, 0.0, 0.55), epsilon = 1e-15);
    }

    fn flip_z() -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(HandSphere::new(Vector3::zeros(), 0.0).is_err());
        assert!(LinkCylinder::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 0.0), 0.1, 0.1).is_err());
        assert!(LinkCylinder::new(Vector3::zeros(), Vector3::z(), -0.1, 0.1).is_err());
    }
}
