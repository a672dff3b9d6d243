//! Small fixed-size helpers shared by the geometry modules.

use nalgebra::{Matrix3, Vector3};

/// Cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Nearest rotation in Frobenius norm (polar factor), with the determinant forced to +1.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        // singular values are sorted in decreasing order, so flip the weakest direction
        let col = u.column(2) * -1.0;
        u.set_column(2, &col);
        r = u * v_t;
    }
    r
}

/// Rotation angle of `a^T b` in radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    // acos loses precision near zero; recover the angle from the skew part instead
    let s = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    )
    .norm()
        / 2.0;
    s.atan2(c)
}

/// Rodrigues rotation for an axis-angle vector.
pub fn axis_angle(v: &Vector3<f64>) -> Matrix3<f64> {
    nalgebra::Rotation3::new(*v).into_inner()
}

/// Rotation whose rows are the camera axes (x right, y down, z forward) of a camera at `eye`
/// looking at `target`, with `up` as the world up direction.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Matrix3<f64> {
    let z = (target - eye).normalize();
    let x = z.cross(up).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    (r.transpose() * r - Matrix3::identity()).abs().max() < tol
        && (r.determinant() - 1.0).abs() < tol
}
