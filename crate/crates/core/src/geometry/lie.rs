use nalgebra::{Matrix3, Translation3, UnitQuaternion};

use super::{Pose, Vec3};

fn hat(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

pub fn so3_exp(w: &Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*w)
}

pub fn so3_log(q: &UnitQuaternion<f64>) -> Vec3 {
    q.scaled_axis()
}

/// Rotation angle in radians, in `[0, pi]`.
pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    q.angle()
}

/// Left Jacobian of SO(3) and its inverse, with series near zero.
fn left_jacobian(w: &Vec3) -> Matrix3<f64> {
    let th2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if th2 < 1e-8 {
        (0.5 - th2 / 24.0, 1.0 / 6.0 - th2 / 120.0)
    } else {
        let th = th2.sqrt();
        ((1.0 - th.cos()) / th2, (th - th.sin()) / (th2 * th))
    };
    Matrix3::identity() + k * a + k * k * b
}

fn left_jacobian_inv(w: &Vec3) -> Matrix3<f64> {
    let th2 = w.norm_squared();
    let k = hat(w);
    let c = if th2 < 1e-8 {
        1.0 / 12.0 + th2 / 720.0
    } else {
        let th = th2.sqrt();
        (1.0 - th * th.sin() / (2.0 * (1.0 - th.cos()))) / th2
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

/// `xi = (rho, omega)`: translation part first, rotation second.
pub fn se3_exp(xi: &[f64; 6]) -> Pose {
    let rho = Vec3::new(xi[0], xi[1], xi[2]);
    let w = Vec3::new(xi[3], xi[4], xi[5]);
    let t = left_jacobian(&w) * rho;
    Pose::from_parts(Translation3::from(t), so3_exp(&w))
}

pub fn se3_log(p: &Pose) -> [f64; 6] {
    let w = so3_log(&p.rotation);
    let rho = left_jacobian_inv(&w) * p.translation.vector;
    [rho.x, rho.y, rho.z, w.x, w.y, w.z]
}

/// Geodesic rotation interpolation with linear translation interpolation.
pub fn interpolate_pose(a: &Pose, b: &Pose, tau: f64) -> Pose {
    let rel = a.rotation.inverse() * b.rotation;
    let r = a.rotation * so3_exp(&(so3_log(&rel) * tau));
    let t = a.translation.vector * (1.0 - tau) + b.translation.vector * tau;
    Pose::from_parts(Translation3::from(t), r)
}
