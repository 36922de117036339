use nalgebra::{Matrix3, Schur};

const SERIES_TERMS: usize = 30;
const SERIES_TOL: f64 = 1e-14;

fn norm1(m: &Matrix3<f64>) -> f64 {
    (0..3)
        .map(|c| m.column(c).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = norm1(m);
    if norm == 0.0 {
        return Matrix3::identity();
    }
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a = m * 0.5f64.powi(squarings);
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for k in 1..=SERIES_TERMS {
        term = term * a / k as f64;
        sum += term;
        if norm1(&term) <= SERIES_TOL * norm1(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// True when `a` has no eigenvalue on the closed negative real axis, i.e. a
/// real principal logarithm exists.
pub fn principal_log_exists(a: &Matrix3<f64>) -> bool {
    let scale = a.norm().max(1.0);
    eigenvalues3(a)
        .iter()
        .all(|&(re, im)| !(im.abs() <= 1e-12 * scale && re <= 1e-12 * scale))
}

/// Eigenvalues as `(re, im)` pairs. Uses a bounded Schur iteration and falls
/// back to the roots of the characteristic cubic if it does not settle.
fn eigenvalues3(a: &Matrix3<f64>) -> [(f64, f64); 3] {
    if let Some(schur) = Schur::try_new(*a, f64::EPSILON, 200) {
        let ev = schur.complex_eigenvalues();
        return [(ev[0].re, ev[0].im), (ev[1].re, ev[1].im), (ev[2].re, ev[2].im)];
    }
    let tr = a.trace();
    let c2 = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)] + a[(0, 0)] * a[(2, 2)]
        - a[(0, 2)] * a[(2, 0)]
        + a[(1, 1)] * a[(2, 2)]
        - a[(1, 2)] * a[(2, 1)];
    cubic_roots(-tr, c2, -a.determinant())
}

/// Roots of `x^3 + b x^2 + c x + d`.
fn cubic_roots(b: f64, c: f64, d: f64) -> [(f64, f64); 3] {
    let shift = -b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        let re = -(u + v) / 2.0 + shift;
        let im = (u - v) * 3f64.sqrt() / 2.0;
        [(u + v + shift, 0.0), (re, im), (re, -im)]
    } else if p == 0.0 {
        [(shift, 0.0); 3]
    } else {
        let r = (-p / 3.0).sqrt();
        let theta = (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0).acos() / 3.0;
        let root = |k: f64| (2.0 * r * (theta - 2.0 * std::f64::consts::PI * k / 3.0).cos() + shift, 0.0);
        [root(0.0), root(1.0), root(2.0)]
    }
}

/// Real principal logarithm by inverse scaling and squaring.
///
/// Returns `None` when no real principal logarithm exists or the square-root
/// iteration fails.
pub fn logm3(a: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if !principal_log_exists(a) {
        return None;
    }
    let mut x = *a;
    let mut roots = 0;
    while norm1(&(x - Matrix3::identity())) > 0.25 {
        if roots >= 60 {
            return None;
        }
        x = sqrtm(&x)?;
        roots += 1;
    }
    // log(X) = 2 atanh(Z), Z = (X - I)(X + I)^-1, ||Z|| <= 1/7.
    let z = (x - Matrix3::identity()) * (x + Matrix3::identity()).try_inverse()?;
    let z2 = z * z;
    let mut power = z;
    let mut sum = z;
    for k in 1..40 {
        power *= z2;
        let term = power / (2 * k + 1) as f64;
        sum += term;
        if norm1(&term) <= 1e-17 * norm1(&sum).max(1e-300) {
            break;
        }
    }
    Some(sum * 2.0f64.powi(roots + 1))
}

/// Principal square root via the Denman-Beavers iteration.
fn sqrtm(a: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut y = *a;
    let mut z = Matrix3::identity();
    for _ in 0..100 {
        let yi = y.try_inverse()?;
        let zi = z.try_inverse()?;
        let y_next = (y + zi) * 0.5;
        let z_next = (z + yi) * 0.5;
        let delta = norm1(&(y_next - y));
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * norm1(&y) {
            return Some(y);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_of_diagonal() {
        let m = Matrix3::from_diagonal(&nalgebra::Vector3::new(2.0f64.ln(), -(2.0f64.ln()), 0.0));
        assert_relative_eq!(
            expm3(&m),
            Matrix3::from_diagonal(&nalgebra::Vector3::new(2.0, 0.5, 1.0)),
            epsilon = 1e-14
        );
        assert_eq!(expm3(&Matrix3::zeros()), Matrix3::identity());
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let m = Matrix3::from_fn(|_, _| rng.random_range(-0.8..0.8));
            let a = expm3(&m);
            let l = logm3(&a).expect("principal log");
            assert_relative_eq!(expm3(&l), a, epsilon = 1e-11);
        }
    }

    #[test]
    fn exp_additive_for_commuting() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = Matrix3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        assert_relative_eq!(expm3(&(m * 2.0)), expm3(&m) * expm3(&m), epsilon = 1e-10);
    }

    #[test]
    fn cubic_roots_match_known_spectra() {
        let mut r = cubic_roots(-6.0, 11.0, -6.0).map(|(re, im)| {
            assert_eq!(im, 0.0);
            re
        });
        r.sort_by(f64::total_cmp);
        assert_relative_eq!(r.as_slice(), [1.0, 2.0, 3.0].as_slice(), epsilon = 1e-12);
        // (x + 2)(x^2 + 1)
        let r = cubic_roots(2.0, 1.0, 2.0);
        assert_relative_eq!(r[0].0, -2.0, epsilon = 1e-12);
        assert_relative_eq!(r[1].1.abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn near_identity_spectrum_terminates() {
        let m = Matrix3::new(1.0, 1e-17, 0.0, -1e-17, 1.0, 2e-17, 3e-18, 0.0, 1.0);
        assert!(principal_log_exists(&m));
        assert!(logm3(&m).is_some());
    }

    #[test]
    fn negative_eigenvalue_has_no_principal_log() {
        let a = Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, -1.0, 1.0));
        assert!(!principal_log_exists(&a));
        assert!(logm3(&a).is_none());
    }
}
