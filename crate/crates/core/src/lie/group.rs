use std::ops::Mul;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};

use super::basis::{algebra_basis, hat, linear_hat, linear_vee, vee};
use super::phi::{phi, phi_inverse, PhiInverseOptions};
use super::so3::{exp_rot, log_rot};
use super::{GroupTag, LieError};

const GROUP_TOL: f64 = 1e-9;

/// Group-tagged twist coordinates `(v, u)`, translation first.
#[derive(Debug, Clone, PartialEq)]
pub struct Twist {
    tag: GroupTag,
    coords: DVector<f64>,
}

impl Twist {
    pub fn new(tag: GroupTag, coords: DVector<f64>) -> Result<Self, LieError> {
        if coords.len() != tag.dim() {
            return Err(LieError::DimensionMismatch {
                tag,
                expected: tag.dim(),
                got: coords.len(),
            });
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(LieError::NonFinite);
        }
        Ok(Self { tag, coords })
    }

    pub fn from_slice(tag: GroupTag, coords: &[f64]) -> Result<Self, LieError> {
        Self::new(tag, DVector::from_column_slice(coords))
    }

    pub fn from_parts(tag: GroupTag, v: &Vector3<f64>, u: &[f64]) -> Result<Self, LieError> {
        let mut c = Vec::with_capacity(tag.dim());
        c.extend_from_slice(v.as_slice());
        c.extend_from_slice(u);
        Self::from_slice(tag, &c)
    }

    pub fn zero(tag: GroupTag) -> Self {
        Self {
            tag,
            coords: DVector::zeros(tag.dim()),
        }
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<f64> {
        self.coords
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.coords[0], self.coords[1], self.coords[2])
    }

    /// Coordinates of the linear part.
    pub fn linear(&self) -> &[f64] {
        &self.coords.as_slice()[3..]
    }

    pub fn hat(&self) -> Matrix4<f64> {
        hat(self.tag, self.coords.as_slice())
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }
}

/// A 4×4 homogeneous matrix belonging to one of the affine groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    tag: GroupTag,
    matrix: Matrix4<f64>,
}

impl AffineTransform {
    /// Validates the group invariants for `tag`.
    pub fn new(tag: GroupTag, matrix: Matrix4<f64>) -> Result<Self, LieError> {
        let t = Self { tag, matrix };
        t.validate()?;
        Ok(t)
    }

    /// Builds a transform without checking the group invariants.
    pub fn from_parts_unchecked(
        tag: GroupTag,
        linear: &Matrix3<f64>,
        translation: &Vector3<f64>,
    ) -> Self {
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(linear);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
        Self { tag, matrix }
    }

    pub fn identity(tag: GroupTag) -> Self {
        Self {
            tag,
            matrix: Matrix4::identity(),
        }
    }

    pub fn translation_only(tag: GroupTag, t: &Vector3<f64>) -> Self {
        Self::from_parts_unchecked(tag, &Matrix3::identity(), t)
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn linear(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.linear() * x + self.translation()
    }

    pub fn inverse(&self) -> Result<Self, LieError> {
        affine_inverse(self)
    }

    /// Re-tags the same matrix, validating it against the new group.
    pub fn with_tag(&self, tag: GroupTag) -> Result<Self, LieError> {
        Self::new(tag, self.matrix)
    }

    pub fn validate(&self) -> Result<(), LieError> {
        let tag = self.tag;
        let bad = |reason| Err(LieError::NotInGroup { tag, reason });
        if !self.matrix.iter().all(|x| x.is_finite()) {
            return bad("non-finite entries");
        }
        let bottom = self.matrix.row(3) - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0);
        if bottom.amax() > 1e-12 {
            return bad("bottom row is not (0, 0, 0, 1)");
        }
        let l = self.linear();
        let det = l.determinant();
        match tag {
            GroupTag::Se3 => {
                if (l.transpose() * l - Matrix3::identity()).amax() > GROUP_TOL
                    || (det - 1.0).abs() > GROUP_TOL
                {
                    return bad("linear part is not a rotation");
                }
            }
            GroupTag::Sim3 => {
                if det <= 0.0 {
                    return bad("linear part has nonpositive determinant");
                }
                let r = l / det.cbrt();
                if (r.transpose() * r - Matrix3::identity()).amax() > GROUP_TOL {
                    return bad("linear part is not a scaled rotation");
                }
            }
            GroupTag::Sa3 => {
                if (det - 1.0).abs() > GROUP_TOL {
                    return bad("linear part does not have unit determinant");
                }
            }
            GroupTag::Ga3 => {
                if det <= 0.0 {
                    return bad("linear part has nonpositive determinant");
                }
            }
        }
        Ok(())
    }
}

impl Mul for AffineTransform {
    type Output = AffineTransform;

    fn mul(self, rhs: AffineTransform) -> AffineTransform {
        &self * &rhs
    }
}

impl Mul<&AffineTransform> for &AffineTransform {
    type Output = AffineTransform;

    fn mul(self, rhs: &AffineTransform) -> AffineTransform {
        debug_assert_eq!(self.tag, rhs.tag, "composing transforms of different groups");
        AffineTransform {
            tag: self.tag,
            matrix: self.matrix * rhs.matrix,
        }
    }
}

/// Linear part `A = sigma(u)` of the decoupled exponential.
pub fn sigma(tag: GroupTag, u: &[f64]) -> Matrix3<f64> {
    match tag {
        GroupTag::Se3 => exp_rot(&Vector3::new(u[0], u[1], u[2])),
        GroupTag::Sim3 => exp_rot(&Vector3::new(u[0], u[1], u[2])) * u[3].exp(),
        GroupTag::Sa3 | GroupTag::Ga3 => phi(&linear_hat(tag, u)),
    }
}

/// Decoupled exponential: translation is `v` verbatim, the linear block is
/// `sigma(u)`.
pub fn group_from_twist(xi: &Twist) -> AffineTransform {
    AffineTransform::from_parts_unchecked(xi.tag(), &sigma(xi.tag(), xi.linear()), &xi.translation())
}

/// Linear coordinates `u` with `sigma(u) = A`.
pub fn sigma_inverse(tag: GroupTag, a: &Matrix3<f64>) -> Result<Vec<f64>, LieError> {
    match tag {
        GroupTag::Se3 => Ok(log_rot(a).as_slice().to_vec()),
        GroupTag::Sim3 => {
            let det = a.determinant();
            if det <= 0.0 {
                return Err(LieError::NotInGroup {
                    tag,
                    reason: "linear part has nonpositive determinant",
                });
            }
            let s = det.ln() / 3.0;
            let w = log_rot(&(a * (-s).exp()));
            Ok(vec![w.x, w.y, w.z, s])
        }
        GroupTag::Sa3 | GroupTag::Ga3 => {
            let u = phi_inverse(a, tag, &PhiInverseOptions::default())?;
            Ok(linear_vee(tag, &u).0)
        }
    }
}

/// Inverse of [`group_from_twist`].
pub fn twist_from_transform(g: &AffineTransform) -> Result<Twist, LieError> {
    let u = sigma_inverse(g.tag(), &g.linear())?;
    Twist::from_parts(g.tag(), &g.translation(), &u)
}

/// Closed-form block inverse.
pub fn affine_inverse(g: &AffineTransform) -> Result<AffineTransform, LieError> {
    let l = g.linear();
    let l_inv = match g.tag() {
        GroupTag::Se3 => l.transpose(),
        GroupTag::Sim3 => {
            let s2 = l.column(0).norm_squared();
            if s2 == 0.0 {
                return Err(LieError::Singular);
            }
            l.transpose() / s2
        }
        GroupTag::Sa3 | GroupTag::Ga3 => l.try_inverse().ok_or(LieError::Singular)?,
    };
    let t = -(l_inv * g.translation());
    Ok(AffineTransform::from_parts_unchecked(g.tag(), &l_inv, &t))
}

/// `Lambda = [Ad(h)]` for the pure translation `h = (I, t)`: column `k` is
/// `vee(h E_k h^-1)`.
pub fn translated_adjoint(tag: GroupTag, t: &Vector3<f64>) -> DMatrix<f64> {
    let mut h = Matrix4::identity();
    h.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    let mut h_inv = Matrix4::identity();
    h_inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-t));
    let basis = algebra_basis(tag);
    let n = tag.dim();
    let mut lambda = DMatrix::zeros(n, n);
    for (k, e) in basis.elements.iter().enumerate() {
        let col = vee(tag, &(h * e * h_inv)).expect("conjugation preserves the algebra");
        lambda.set_column(k, &col);
    }
    lambda
}

/// `[ad(zeta)]`: column `k` is `vee([hat(zeta), E_k])`.
pub fn ad_matrix(zeta: &Twist) -> DMatrix<f64> {
    let tag = zeta.tag();
    let z = zeta.hat();
    let basis = algebra_basis(tag);
    let n = tag.dim();
    let mut ad = DMatrix::zeros(n, n);
    for (k, e) in basis.elements.iter().enumerate() {
        let col = vee(tag, &(z * e - e * z)).expect("the bracket stays in the algebra");
        ad.set_column(k, &col);
    }
    ad
}

/// Structure constants of a group's algebra, for evaluating `[ad(zeta)]`
/// products without forming brackets.
#[derive(Debug, Clone)]
pub struct AdjointTable {
    tag: GroupTag,
    /// Nonzero `(i, j, k, c)` with `[ad(e_i)]_{jk} = c`.
    entries: Vec<(usize, usize, usize, f64)>,
}

impl AdjointTable {
    pub fn for_group(tag: GroupTag) -> &'static AdjointTable {
        static CACHE: OnceLock<[AdjointTable; 4]> = OnceLock::new();
        let all = CACHE.get_or_init(|| GroupTag::ALL.map(AdjointTable::build));
        &all[GroupTag::ALL.iter().position(|t| *t == tag).unwrap()]
    }

    fn build(tag: GroupTag) -> Self {
        let n = tag.dim();
        let mut entries = Vec::new();
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            let ad = ad_matrix(&Twist::new(tag, e).unwrap());
            for j in 0..n {
                for k in 0..n {
                    let c = ad[(j, k)];
                    if c.abs() > 1e-14 {
                        entries.push((i, j, k, c));
                    }
                }
            }
        }
        Self { tag, entries }
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    pub fn ad(&self, zeta: &[f64]) -> DMatrix<f64> {
        let n = self.tag.dim();
        let mut m = DMatrix::zeros(n, n);
        for &(i, j, k, c) in &self.entries {
            m[(j, k)] += zeta[i] * c;
        }
        m
    }

    /// `[ad(zeta)]^T y`, written into `out`.
    pub fn ad_transpose_mul(&self, zeta: &[f64], y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(i, j, k, c) in &self.entries {
            out[k] += zeta[i] * c * y[j];
        }
    }
}
