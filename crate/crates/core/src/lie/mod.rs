//! Fixed-basis numerics for the affine matrix groups SE(3), SIM(3), SA(3) and
//! GA(3).
//!
//! Every group here is a semi-direct product `R^3 ⋊ H` represented by 4×4
//! homogeneous matrices. Twist coordinates always list the three translation
//! coordinates first, followed by the coordinates of the linear part in the
//! canonical basis returned by [`algebra_basis`].

mod basis;
mod expm;
mod group;
mod phi;
mod so3;

pub use basis::{algebra_basis, hat, linear_generator, vee, AlgebraBasis};
pub(crate) use basis::{linear_hat, linear_vee};
pub use expm::{expm3, logm3, principal_log_exists};
pub use group::{
    ad_matrix, affine_inverse, group_from_twist, sigma, sigma_inverse, translated_adjoint,
    twist_from_transform, AdjointTable, AffineTransform, Twist,
};
pub use phi::{phi, phi_inverse, PhiInverseOptions};
pub use so3::{exp_rot, hat3, log_rot};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Which affine group a twist or transform belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum GroupTag {
    /// Rigid motions.
    Se3,
    /// Rigid motions with isotropic scale.
    Sim3,
    /// Translations with unit-determinant linear part.
    Sa3,
    /// Translations with positive-determinant linear part.
    Ga3,
}

impl GroupTag {
    pub const ALL: [GroupTag; 4] = [GroupTag::Se3, GroupTag::Sim3, GroupTag::Sa3, GroupTag::Ga3];

    /// Twist dimension `n`.
    pub const fn dim(self) -> usize {
        match self {
            GroupTag::Se3 => 6,
            GroupTag::Sim3 => 7,
            GroupTag::Sa3 => 11,
            GroupTag::Ga3 => 12,
        }
    }

    /// Number of coordinates of the linear part, `n - 3`.
    pub const fn linear_dim(self) -> usize {
        self.dim() - 3
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            GroupTag::Se3 => "se3",
            GroupTag::Sim3 => "sim3",
            GroupTag::Sa3 => "sa3",
            GroupTag::Ga3 => "ga3",
        }
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupTag {
    type Err = LieError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "se3" => Ok(GroupTag::Se3),
            "sim3" => Ok(GroupTag::Sim3),
            "sa3" => Ok(GroupTag::Sa3),
            "ga3" => Ok(GroupTag::Ga3),
            other => Err(LieError::UnknownGroup(other.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("unknown group tag {0:?}")]
    UnknownGroup(String),
    #[error("twist for {tag} needs {expected} coordinates, got {got}")]
    DimensionMismatch {
        tag: GroupTag,
        expected: usize,
        got: usize,
    },
    #[error("twist coordinates must be finite")]
    NonFinite,
    #[error("matrix is not in the {tag} algebra (residual {residual:e})")]
    NotInAlgebra { tag: GroupTag, residual: f64 },
    #[error("matrix is not a valid {tag} element: {reason}")]
    NotInGroup { tag: GroupTag, reason: &'static str },
    #[error("linear part is singular")]
    Singular,
    #[error("phi inverse did not converge after {iterations} iterations (residual {residual:e})")]
    PhiInverseDiverged { iterations: usize, residual: f64 },
}
