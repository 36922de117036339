use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

/// Cross-product matrix: `hat3(w) * b == w.cross(&b)`.
pub fn hat3(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues' formula. Exact identity at `w = 0`.
pub fn exp_rot(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat3(w);
    if theta2 == 0.0 {
        return Matrix3::identity();
    }
    let (a, b) = if theta2 < 1e-8 {
        // Taylor expansions of sin(t)/t and (1 - cos t)/t^2.
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of `r` with angle in `[0, pi]`.
///
/// At angle pi the axis is taken from the dominant column of `(R + I) / 2` and
/// oriented so its first nonzero component is positive.
pub fn log_rot(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // 2 sin(theta) * axis
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * s.norm();
    let theta = sin.atan2(cos);

    if theta < 1e-6 {
        // theta / sin(theta) ~ 1 + theta^2 / 6
        return s * (0.5 * (1.0 + theta * theta / 6.0));
    }
    if theta < PI - 1e-3 {
        return s * (0.5 * theta / sin);
    }

    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part, (R + R^T)/2 = cos I + (1 - cos) n n^T.
    let sym = (r + r.transpose()) * 0.5;
    let nn = (sym - Matrix3::identity() * cos) / (1.0 - cos);
    let (col, _) = (0..3)
        .map(|i| (i, nn[(i, i)]))
        .fold((0, f64::MIN), |best, c| if c.1 > best.1 { c } else { best });
    let mut axis: Vector3<f64> = nn.column(col).into_owned();
    axis /= axis.norm();

    if s.norm() > 1e-12 {
        if axis.dot(&s) < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}
