//! The surjective retraction `phi(U) = exp(U^T) exp(U - U^T)` onto SL(3) and
//! GL+(3), and its numerical inverse.

use nalgebra::{DMatrix, DVector, Matrix3};

use super::basis::{linear_hat, linear_vee};
use super::expm::{expm3, logm3};
use super::{GroupTag, LieError};

pub fn phi(u: &Matrix3<f64>) -> Matrix3<f64> {
    let ut = u.transpose();
    expm3(&ut) * expm3(&(u - ut))
}

/// Gradient-descent settings for [`phi_inverse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiInverseOptions {
    pub max_iterations: usize,
    /// Central finite-difference step for the gradient.
    pub fd_step: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Stop once `||phi(U) - A||_F^2` drops below this.
    pub objective_tol: f64,
}

impl Default for PhiInverseOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            fd_step: 1e-6,
            armijo: 1e-4,
            objective_tol: 1e-16,
        }
    }
}

/// Finds `U` in the linear algebra of `tag` with `phi(U) = A`.
///
/// Minimizes `||phi(U) - A||_F^2` over the algebra coordinates with a
/// central finite-difference derivative and Armijo backtracking. Each
/// iteration first tries the Gauss-Newton direction built from the same
/// finite differences and falls back to steepest descent with halving when
/// that step is not accepted. The start point is the principal logarithm of
/// `A` projected onto the algebra, or zero when `A` has an eigenvalue on the
/// closed negative real axis.
pub fn phi_inverse(
    a: &Matrix3<f64>,
    tag: GroupTag,
    opts: &PhiInverseOptions,
) -> Result<Matrix3<f64>, LieError> {
    let m = tag.linear_dim();
    let residual = |c: &[f64]| phi(&linear_hat(tag, c)) - a;

    let mut coords = match logm3(a) {
        Some(l) => linear_vee(tag, &l).0,
        None => vec![0.0; m],
    };
    let mut r = residual(&coords);
    let mut f = r.norm_squared();
    let mut jac = DMatrix::<f64>::zeros(9, m);
    let mut trial = vec![0.0; m];
    let mut step: f64 = 1.0;
    let mut iterations = 0;

    while iterations < opts.max_iterations && f >= opts.objective_tol {
        iterations += 1;
        for k in 0..m {
            let c0 = coords[k];
            coords[k] = c0 + opts.fd_step;
            let rp = residual(&coords);
            coords[k] = c0 - opts.fd_step;
            let rm = residual(&coords);
            coords[k] = c0;
            let d = (rp - rm) / (2.0 * opts.fd_step);
            jac.column_mut(k).copy_from_slice(d.as_slice());
        }
        let rv = DVector::from_column_slice(r.as_slice());
        // gradient of ||r||^2
        let grad = jac.transpose() * &rv * 2.0;
        let g2 = grad.norm_squared();
        if g2 == 0.0 {
            break;
        }

        let mut accepted = false;
        if let Some(delta) = (jac.transpose() * &jac).cholesky().map(|ch| ch.solve(&(-&grad * 0.5))) {
            let slope = grad.dot(&delta);
            if slope < 0.0 {
                for k in 0..m {
                    trial[k] = coords[k] + delta[k];
                }
                let rt = residual(&trial);
                let ft = rt.norm_squared();
                if ft <= f + opts.armijo * slope {
                    coords.copy_from_slice(&trial);
                    r = rt;
                    f = ft;
                    accepted = true;
                }
            }
        }

        if !accepted {
            // Steepest descent, backtracking from twice the last accepted step.
            step = (step * 2.0).min(1.0);
            for _ in 0..60 {
                for k in 0..m {
                    trial[k] = coords[k] - step * grad[k];
                }
                let rt = residual(&trial);
                let ft = rt.norm_squared();
                if ft <= f - opts.armijo * step * g2 {
                    coords.copy_from_slice(&trial);
                    r = rt;
                    f = ft;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
        }
        if !accepted {
            break;
        }
    }

    if f < opts.objective_tol {
        Ok(linear_hat(tag, &coords))
    } else {
        Err(LieError::PhiInverseDiverged {
            iterations,
            residual: f.sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series_exp(m: &Matrix3<f64>) -> Matrix3<f64> {
        let s = 8;
        let a = m / f64::from(1 << s);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for k in 1..30 {
            term = term * a / k as f64;
            sum += term;
        }
        for _ in 0..s {
            sum = sum * sum;
        }
        sum
    }

    fn random_algebra(rng: &mut ChaCha8Rng, tag: GroupTag, radius: f64) -> Matrix3<f64> {
        let c: Vec<f64> = (0..tag.linear_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = linear_hat(tag, &c);
        u * (rng.random_range(0.0..radius) / u.norm())
    }

    #[test]
    fn phi_basics() {
        assert_eq!(phi(&Matrix3::zeros()), Matrix3::identity());
        let u = Matrix3::from_diagonal(&Vector3::new(2.0f64.ln(), -(2.0f64.ln()), 0.0));
        assert_relative_eq!(
            phi(&u),
            Matrix3::from_diagonal(&Vector3::new(2.0, 0.5, 1.0)),
            epsilon = 1e-14
        );
    }

    #[test]
    fn phi_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let u = Matrix3::from_fn(|_, _| rng.random_range(-1.5..1.5));
            let oracle = series_exp(&u.transpose()) * series_exp(&(u - u.transpose()));
            assert_relative_eq!(phi(&u), oracle, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn phi_maps_sl3_into_sl3() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let u = random_algebra(&mut rng, GroupTag::Sa3, 2.0);
            assert!((phi(&u).determinant() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn inverse_of_identity_is_zero() {
        for tag in [GroupTag::Sa3, GroupTag::Ga3] {
            let u = phi_inverse(&Matrix3::identity(), tag, &Default::default()).unwrap();
            assert!(u.amax() < 1e-12);
        }
    }

    #[test]
    fn inverse_of_positive_diagonal() {
        let a = Matrix3::from_diagonal(&Vector3::new(4.0, 0.5, 0.5));
        let u = phi_inverse(&a, GroupTag::Sa3, &Default::default()).unwrap();
        assert_relative_eq!(
            u,
            Matrix3::from_diagonal(&Vector3::new(4.0f64.ln(), 0.5f64.ln(), 0.5f64.ln())),
            epsilon = 1e-9
        );
        assert_relative_eq!(phi(&u), a, epsilon = 1e-8);
    }

    #[test]
    fn inverse_reconstructs_forward_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for tag in [GroupTag::Sa3, GroupTag::Ga3] {
            for _ in 0..40 {
                let u0 = random_algebra(&mut rng, tag, 1.0);
                let a = phi(&u0);
                let u = phi_inverse(&a, tag, &Default::default()).unwrap();
                assert!((phi(&u) - a).norm() <= 1e-8);
                if tag == GroupTag::Sa3 {
                    assert!(u.trace().abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exhausted_budget_reports_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let a = phi(&random_algebra(&mut rng, GroupTag::Ga3, 1.0));
        let opts = PhiInverseOptions {
            max_iterations: 0,
            objective_tol: 0.0,
            ..Default::default()
        };
        match phi_inverse(&a, GroupTag::Ga3, &opts) {
            Err(LieError::PhiInverseDiverged { residual, .. }) => assert!(residual.is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
