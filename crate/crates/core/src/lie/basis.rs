use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};

use super::so3::hat3;
use super::{GroupTag, LieError};

const VEE_TOL: f64 = 1e-9;

/// The ordered basis `E_1..E_n` of a group's Lie algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraBasis {
    pub tag: GroupTag,
    pub elements: Vec<Matrix4<f64>>,
}

/// The `k`-th (zero-based) generator of the linear part.
///
/// * SE(3): `hat(e_1..e_3)`
/// * SIM(3): `hat(e_1..e_3)`, then `I` for scale
/// * SA(3): `hat(e_k)`, the sign-dropped `|hat(e_k)|`, `diag(1,-1,0)`, `diag(0,1,-1)`
/// * GA(3): column-major unit matrices
///
/// # Panics
/// If `k >= tag.linear_dim()`.
pub fn linear_generator(tag: GroupTag, k: usize) -> Matrix3<f64> {
    assert!(k < tag.linear_dim(), "generator index {k} out of range for {tag}");
    match (tag, k) {
        (GroupTag::Ga3, k) => {
            let mut m = Matrix3::zeros();
            m[(k % 3, k / 3)] = 1.0;
            m
        }
        (_, 0..=2) => hat3(&Vector3::ith(k, 1.0)),
        (GroupTag::Sim3, 3) => Matrix3::identity(),
        (GroupTag::Sa3, 3..=5) => hat3(&Vector3::ith(k - 3, 1.0)).abs(),
        (GroupTag::Sa3, 6) => Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 0.0)),
        (GroupTag::Sa3, 7) => Matrix3::from_diagonal(&Vector3::new(0.0, 1.0, -1.0)),
        _ => unreachable!(),
    }
}

pub fn algebra_basis(tag: GroupTag) -> AlgebraBasis {
    let mut elements = Vec::with_capacity(tag.dim());
    for k in 0..3 {
        let mut e = Matrix4::zeros();
        e[(k, 3)] = 1.0;
        elements.push(e);
    }
    for k in 0..tag.linear_dim() {
        let mut e = Matrix4::zeros();
        e.fixed_view_mut::<3, 3>(0, 0).copy_from(&linear_generator(tag, k));
        elements.push(e);
    }
    AlgebraBasis { tag, elements }
}

/// Linear part `sum u_k E~_k` for the linear coordinates `u`.
pub(crate) fn linear_hat(tag: GroupTag, u: &[f64]) -> Matrix3<f64> {
    debug_assert_eq!(u.len(), tag.linear_dim());
    match tag {
        GroupTag::Se3 => hat3(&Vector3::new(u[0], u[1], u[2])),
        GroupTag::Sim3 => hat3(&Vector3::new(u[0], u[1], u[2])) + Matrix3::identity() * u[3],
        GroupTag::Sa3 => Matrix3::new(
            u[6],
            -u[2] + u[5],
            u[1] + u[4],
            u[2] + u[5],
            -u[6] + u[7],
            -u[0] + u[3],
            -u[1] + u[4],
            u[0] + u[3],
            -u[7],
        ),
        GroupTag::Ga3 => Matrix3::from_column_slice(u),
    }
}

/// `sum u_k E_k`.
///
/// # Panics
/// If `u.len() != tag.dim()`.
pub fn hat(tag: GroupTag, u: &[f64]) -> Matrix4<f64> {
    assert_eq!(u.len(), tag.dim(), "hat: wrong coordinate count for {tag}");
    let mut x = Matrix4::zeros();
    x.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&linear_hat(tag, &u[3..]));
    x[(0, 3)] = u[0];
    x[(1, 3)] = u[1];
    x[(2, 3)] = u[2];
    x
}

/// Dual basis of the linear generators: `u_k = <D_k, L>` (Frobenius) for any
/// `L` in the span.
fn duals(tag: GroupTag) -> &'static [Matrix3<f64>] {
    static CACHE: OnceLock<[Vec<Matrix3<f64>>; 4]> = OnceLock::new();
    let all = CACHE.get_or_init(|| GroupTag::ALL.map(build_duals));
    let idx = GroupTag::ALL.iter().position(|t| *t == tag).unwrap();
    &all[idx]
}

fn build_duals(tag: GroupTag) -> Vec<Matrix3<f64>> {
    let m = tag.linear_dim();
    let b = DMatrix::from_fn(9, m, |r, c| linear_generator(tag, c)[(r % 3, r / 3)]);
    let gram = b.transpose() * &b;
    let pinv = gram
        .try_inverse()
        .expect("linear generators are independent")
        * b.transpose();
    (0..m)
        .map(|k| Matrix3::from_fn(|r, c| pinv[(k, r + 3 * c)]))
        .collect()
}

/// Linear coordinates of `l` plus the max-abs reconstruction residual.
pub(crate) fn linear_vee(tag: GroupTag, l: &Matrix3<f64>) -> (Vec<f64>, f64) {
    let coords: Vec<f64> = duals(tag).iter().map(|d| d.component_mul(l).sum()).collect();
    let residual = (linear_hat(tag, &coords) - l).amax();
    (coords, residual)
}

/// Inverse of [`hat`]; rejects matrices outside the algebra.
pub fn vee(tag: GroupTag, x: &Matrix4<f64>) -> Result<DVector<f64>, LieError> {
    let l: Matrix3<f64> = x.fixed_view::<3, 3>(0, 0).into_owned();
    let (lin, residual) = linear_vee(tag, &l);
    let bottom = x.row(3).amax();
    let residual = residual.max(bottom);
    let scale = x.amax().max(1.0);
    if !(residual <= VEE_TOL * scale) {
        return Err(LieError::NotInAlgebra { tag, residual });
    }
    let mut out = DVector::zeros(tag.dim());
    out[0] = x[(0, 3)];
    out[1] = x[(1, 3)];
    out[2] = x[(2, 3)];
    out.rows_mut(3, lin.len()).copy_from_slice(&lin);
    Ok(out)
}
