//! Camera twists from dense scene flow.
//!
//! Every valid pixel contributes an induced twist: the twist at the camera
//! origin obtained by rigidly attaching the pixel's 3D point, with its observed
//! velocity, to the camera frame. The camera twist is their mean.

use nalgebra::{DVector, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::lie::{group_from_twist, translated_adjoint, AffineTransform, GroupTag, LieError, Twist};

/// Pixels per partial sum in the reduction. Fixed so the summation tree does
/// not depend on the thread count.
const REDUCE_CHUNK: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("point has zero norm")]
    ZeroNormPoint,
    #[error("only {count} valid pixels, need at least {required}")]
    LowConfidence { count: usize, required: usize },
    #[error("field buffers disagree with {width}x{height}")]
    ShapeMismatch { width: usize, height: usize },
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// Per-pixel 3D points (m, camera frame), velocities (m/frame) and validity.
///
/// Buffers are row-major with `width * height` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFlowField {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl PointFlowField {
    pub fn new(
        width: usize,
        height: usize,
        points: Vec<Vector3<f64>>,
        velocities: Vec<Vector3<f64>>,
        valid: Vec<bool>,
    ) -> Result<Self, EstimationError> {
        let n = width * height;
        if points.len() != n || velocities.len() != n || valid.len() != n {
            return Err(EstimationError::ShapeMismatch { width, height });
        }
        let valid = valid
            .into_iter()
            .zip(points.iter().zip(&velocities))
            .map(|(ok, (x, v))| ok && usable(x, v))
            .collect();
        Ok(Self {
            width,
            height,
            points,
            velocities,
            valid,
        })
    }

    /// An unstructured point cloud, stored as a single row.
    pub fn from_points(points: Vec<Vector3<f64>>, velocities: Vec<Vector3<f64>>) -> Self {
        let n = points.len();
        Self::new(n, 1, points, velocities, vec![true; n]).expect("equal lengths")
    }

    /// Number of valid pixels `D`.
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_points(&self) -> impl Iterator<Item = (&Vector3<f64>, &Vector3<f64>)> {
        self.points
            .iter()
            .zip(&self.velocities)
            .zip(&self.valid)
            .filter_map(|(pv, ok)| ok.then_some(pv))
    }
}

fn usable(x: &Vector3<f64>, v: &Vector3<f64>) -> bool {
    x.iter().chain(v.iter()).all(|c| c.is_finite()) && x.norm_squared() > 0.0
}

/// Thresholds for discarding implausible flow.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterPolicy {
    pub z_min: f64,
    pub z_max: f64,
    /// Hard cap on speed, m/frame.
    pub v_abs_max: f64,
    /// Speeds above `median + mad_kappa * MAD` are rejected.
    pub mad_kappa: f64,
    /// Minimum valid count for a confident estimate.
    pub d_min: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            z_min: 0.3,
            z_max: 10.0,
            v_abs_max: 1.0,
            mad_kappa: 5.0,
            d_min: 100,
        }
    }
}

impl FilterPolicy {
    pub fn is_valid(&self) -> bool {
        self.z_min < self.z_max && self.v_abs_max > 0.0 && self.mad_kappa > 0.0 && self.d_min >= 1
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Invalidates pixels with out-of-range depth, non-finite values, or speeds
/// that are too large in absolute terms or relative to the median speed.
pub fn filter_flow(field: &PointFlowField, policy: &FilterPolicy) -> PointFlowField {
    let mut out = field.clone();
    for ((ok, x), v) in out.valid.iter_mut().zip(&field.points).zip(&field.velocities) {
        if *ok {
            *ok = usable(x, v)
                && x.z >= policy.z_min
                && x.z <= policy.z_max
                && v.norm() <= policy.v_abs_max;
        }
    }

    let mut speeds: Vec<f64> = out.valid_points().map(|(_, v)| v.norm()).collect();
    if speeds.is_empty() {
        return out;
    }
    let med = median(&mut speeds);
    let mut deviations: Vec<f64> = speeds.iter().map(|s| (s - med).abs()).collect();
    let mad = median(&mut deviations);
    if mad > 0.0 {
        let cutoff = med + policy.mad_kappa * mad;
        for (ok, v) in out.valid.iter_mut().zip(&field.velocities) {
            if *ok && v.norm() > cutoff {
                *ok = false;
            }
        }
    }
    out
}

/// Writes the linear coordinates of the induced twist into `out[..n-3]`.
#[inline]
fn induced_linear(tag: GroupTag, x: &Vector3<f64>, v: &Vector3<f64>, out: &mut [f64]) {
    let inv = 1.0 / x.norm_squared();
    match tag {
        GroupTag::Se3 | GroupTag::Sim3 => {
            let w = x.cross(v) * inv;
            out[0] = w.x;
            out[1] = w.y;
            out[2] = w.z;
            if tag == GroupTag::Sim3 {
                out[3] = x.dot(v) * inv;
            }
        }
        GroupTag::Sa3 => {
            let w = x.cross(v) * inv;
            out[0] = w.x;
            out[1] = w.y;
            out[2] = w.z;
            // Sign-dropped structure matrix [[0, x3, x2], [x3, 0, x1], [x2, x1, 0]].
            out[3] = (x.z * v.y + x.y * v.z) * inv;
            out[4] = (x.z * v.x + x.x * v.z) * inv;
            out[5] = (x.y * v.x + x.x * v.y) * inv;
            out[6] = (x.x * v.x - x.y * v.y) * inv;
            out[7] = (x.y * v.y - x.z * v.z) * inv;
        }
        GroupTag::Ga3 => {
            for n in 0..3 {
                for m in 0..3 {
                    out[3 * n + m] = x[n] * v[m] * inv;
                }
            }
        }
    }
}

/// Twist induced at the camera origin by point `x` moving with velocity `v`.
pub fn induced_twist(tag: GroupTag, x: &Vector3<f64>, v: &Vector3<f64>) -> Result<Twist, EstimationError> {
    if !(x.norm_squared() > 0.0) {
        return Err(EstimationError::ZeroNormPoint);
    }
    let mut lin = [0.0; 9];
    induced_linear(tag, x, v, &mut lin);
    Ok(Twist::from_parts(tag, v, &lin[..tag.linear_dim()])?)
}

/// Sum of induced twists over valid pixels, optionally about a `center`.
fn induced_sum(tag: GroupTag, field: &PointFlowField, center: &Vector3<f64>) -> [f64; 12] {
    let n = tag.dim();
    let partials: Vec<[f64; 12]> = field
        .points
        .par_chunks(REDUCE_CHUNK)
        .zip(field.velocities.par_chunks(REDUCE_CHUNK))
        .zip(field.valid.par_chunks(REDUCE_CHUNK))
        .map(|((xs, vs), oks)| {
            let mut acc = [0.0; 12];
            let mut lin = [0.0; 9];
            for ((x, v), ok) in xs.iter().zip(vs).zip(oks) {
                if !*ok {
                    continue;
                }
                let xc = x - center;
                induced_linear(tag, &xc, v, &mut lin);
                acc[0] += v.x;
                acc[1] += v.y;
                acc[2] += v.z;
                for k in 3..n {
                    acc[k] += lin[k - 3];
                }
            }
            acc
        })
        .collect();
    partials.iter().fold([0.0; 12], |mut acc, p| {
        for k in 0..n {
            acc[k] += p[k];
        }
        acc
    })
}

fn checked_count(field: &PointFlowField, d_min: usize) -> Result<usize, EstimationError> {
    let count = field.valid_count();
    if count < d_min.max(1) {
        return Err(EstimationError::LowConfidence {
            count,
            required: d_min.max(1),
        });
    }
    Ok(count)
}

/// Mean of the induced twists over valid pixels, the least-squares twist for
/// the whole field.
pub fn camera_twist(tag: GroupTag, field: &PointFlowField, d_min: usize) -> Result<Twist, EstimationError> {
    let count = checked_count(field, d_min)?;
    let sum = induced_sum(tag, field, &Vector3::zeros());
    let coords = DVector::from_iterator(tag.dim(), sum[..tag.dim()].iter().map(|s| s / count as f64));
    Ok(Twist::new(tag, coords)?)
}

/// Camera twist computed about the centroid of the valid points and mapped
/// back to the camera frame with the adjoint of the centroid translation.
pub fn recentered_camera_twist(
    tag: GroupTag,
    field: &PointFlowField,
    d_min: usize,
) -> Result<Twist, EstimationError> {
    let count = checked_count(field, d_min)?;
    let centroid = field
        .valid_points()
        .fold(Vector3::zeros(), |acc, (x, _)| acc + x)
        / count as f64;
    let sum = induced_sum(tag, field, &centroid);
    let local = DVector::from_iterator(tag.dim(), sum[..tag.dim()].iter().map(|s| s / count as f64));
    let coords = translated_adjoint(tag, &centroid) * local;
    Ok(Twist::new(tag, coords)?)
}

/// Result of estimating one inter-frame motion.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionEstimate {
    pub twist: Twist,
    pub transform: AffineTransform,
    pub valid_count: usize,
    /// Too few valid pixels; `twist` and `transform` are the identity.
    pub low_confidence: bool,
}

/// Filters the field, averages induced twists and exponentiates. Degrades to
/// the identity motion, flagged, when too few pixels survive filtering.
pub fn motion_between_frames(
    tag: GroupTag,
    field: &PointFlowField,
    policy: &FilterPolicy,
    recenter: bool,
) -> MotionEstimate {
    let filtered = filter_flow(field, policy);
    let valid_count = filtered.valid_count();
    let estimate = if recenter {
        recentered_camera_twist(tag, &filtered, policy.d_min)
    } else {
        camera_twist(tag, &filtered, policy.d_min)
    };
    match estimate {
        Ok(twist) => MotionEstimate {
            transform: group_from_twist(&twist),
            twist,
            valid_count,
            low_confidence: false,
        },
        Err(_) => MotionEstimate {
            twist: Twist::zero(tag),
            transform: AffineTransform::identity(tag),
            valid_count,
            low_confidence: true,
        },
    }
}
