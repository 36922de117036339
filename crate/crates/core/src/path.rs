//! Camera paths and end-constrained optimal stabilization.
//!
//! A camera path is integrated on the right from per-frame twists. It is cut
//! into segments at keyframes. On each segment the correction twists `zeta`
//! minimize `J = 1/2 sum (zeta - zeta_bar)^T W (zeta - zeta_bar)`, where
//! `zeta_bar` is the twist that exactly cancels the camera motion. The
//! stationarity condition is the Euler-Poincare equation
//! `zeta' = W^-1 [b' + ad(zeta)^T (W zeta - b)]` with `b = W zeta_bar`. It is
//! solved by shooting on the initial value so the segment ends on its
//! prescribed correction.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix4};
use rayon::prelude::*;
use thiserror::Error;

use crate::lie::{
    affine_inverse, expm3, group_from_twist, linear_hat, linear_vee, log_rot, logm3, sigma,
    sigma_inverse, ad_matrix, AdjointTable, AffineTransform, GroupTag, LieError, Twist,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("weight matrix is not symmetric positive definite")]
    NotSpd,
    #[error("segment {start}..{end} is empty or outside the path")]
    BadSegment { start: usize, end: usize },
    #[error("segments do not tile the path: {0}")]
    SegmentMismatch(String),
    #[error("integration produced a non-finite state at sample {0}")]
    NonFinite(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Poses `g_c(i)` for frames `0..=N` and the `N` step twists between them.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPath {
    pub tag: GroupTag,
    pub poses: Vec<AffineTransform>,
    pub steps: Vec<Twist>,
}

impl CameraPath {
    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn last_frame(&self) -> usize {
        self.poses.len() - 1
    }
}

/// `g_c(0) = I`, `g_c(i + 1) = g_c(i) g(xi_i)`.
///
/// # Panics
/// If a twist belongs to a different group than `tag`.
pub fn integrate_path(tag: GroupTag, twists: &[Twist]) -> CameraPath {
    let mut poses = Vec::with_capacity(twists.len() + 1);
    let mut g = AffineTransform::identity(tag);
    poses.push(g);
    for xi in twists {
        assert_eq!(xi.tag(), tag, "twist group differs from path group");
        g = g * group_from_twist(xi);
        poses.push(g);
    }
    CameraPath {
        tag,
        poses,
        steps: twists.to_vec(),
    }
}

/// The twist whose decoupled exponential inverts `g(xi)`:
/// `(-A^-1 v, sigma^-1(A^-1))`.
pub fn zeta_bar(xi: &Twist) -> Result<Twist, PathError> {
    let tag = xi.tag();
    let a = sigma(tag, xi.linear());
    let a_inv = match tag {
        GroupTag::Se3 => a.transpose(),
        _ => a.try_inverse().ok_or(LieError::Singular)?,
    };
    let v = -(a_inv * xi.translation());
    let u: Vec<f64> = match tag {
        GroupTag::Se3 | GroupTag::Sim3 => xi.linear().iter().map(|c| -c).collect(),
        GroupTag::Sa3 | GroupTag::Ga3 => sigma_inverse(tag, &a_inv)?,
    };
    Ok(Twist::from_parts(tag, &v, &u)?)
}

fn check_spd(w: &DMatrix<f64>, n: usize) -> Result<(), PathError> {
    if w.nrows() != n || w.ncols() != n {
        return Err(PathError::NotSpd);
    }
    let scale = w.amax().max(1.0);
    if (w - w.transpose()).amax() > 1e-12 * scale || w.clone().cholesky().is_none() {
        return Err(PathError::NotSpd);
    }
    Ok(())
}

/// `W^-1 [b' + [ad(zeta)]^T (W zeta - b)]`.
pub fn ep_rhs(
    zeta: &Twist,
    b: &DVector<f64>,
    b_dot: &DVector<f64>,
    w: &DMatrix<f64>,
) -> Result<DVector<f64>, PathError> {
    check_spd(w, zeta.tag().dim())?;
    let rhs = b_dot + ad_matrix(zeta).transpose() * (w * zeta.coords() - b);
    Ok(w.clone().cholesky().ok_or(PathError::NotSpd)?.solve(&rhs))
}

/// One keyframe-to-keyframe piece of the path with its optimization data.
///
/// Samples are indexed by step `k = 0..K` where `K = end - start`; sample `k`
/// belongs to the step from frame `start + k` to `start + k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub tag: GroupTag,
    pub start: usize,
    pub end: usize,
    pub steps: Vec<Twist>,
    pub zeta_bar: Vec<Twist>,
    pub b: Vec<DVector<f64>>,
    /// Slope of the piecewise-linear `b` on `[k, k + 1]`; the last entry
    /// repeats the previous slope.
    pub b_dot: Vec<DVector<f64>>,
    pub weight: DMatrix<f64>,
    /// Camera pose at `start`.
    pub start_pose: AffineTransform,
    pub start_constraint: AffineTransform,
    pub end_constraint: AffineTransform,
}

impl PathSegment {
    pub fn new(
        path: &CameraPath,
        start: usize,
        end: usize,
        weight: Option<&DMatrix<f64>>,
        start_constraint: AffineTransform,
        end_constraint: AffineTransform,
    ) -> Result<Self, PathError> {
        if start >= end || end > path.last_frame() {
            return Err(PathError::BadSegment { start, end });
        }
        let tag = path.tag;
        let n = tag.dim();
        let weight = weight.cloned().unwrap_or_else(|| DMatrix::identity(n, n));
        check_spd(&weight, n)?;
        let steps = path.steps[start..end].to_vec();
        let zeta_bar = steps.iter().map(zeta_bar).collect::<Result<Vec<_>, _>>()?;
        let b: Vec<DVector<f64>> = zeta_bar.iter().map(|z| &weight * z.coords()).collect();
        let k = b.len();
        let b_dot = (0..k)
            .map(|i| match (i + 1 < k, i > 0) {
                (true, _) => &b[i + 1] - &b[i],
                (false, true) => &b[i] - &b[i - 1],
                (false, false) => DVector::zeros(n),
            })
            .collect();
        Ok(Self {
            tag,
            start,
            end,
            steps,
            zeta_bar,
            b,
            b_dot,
            weight,
            start_pose: path.poses[start],
            start_constraint: start_constraint.with_tag(tag)?,
            end_constraint: end_constraint.with_tag(tag)?,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `J[zeta]` for samples `zeta_k`.
    pub fn cost(&self, zeta: &[DVector<f64>]) -> f64 {
        zeta.iter()
            .zip(&self.zeta_bar)
            .map(|(z, zb)| {
                let d = z - zb.coords();
                0.5 * d.dot(&(&self.weight * &d))
            })
            .sum()
    }
}

/// Precomputed right-hand side of the Euler-Poincare equation.
struct EpSystem<'a> {
    n: usize,
    table: &'static AdjointTable,
    identity_weight: bool,
    weight: &'a DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    b: Vec<f64>,
    b_dot: Vec<f64>,
}

impl<'a> EpSystem<'a> {
    fn new(seg: &'a PathSegment) -> Self {
        let n = seg.tag.dim();
        let identity_weight = seg.weight == DMatrix::identity(n, n);
        Self {
            n,
            table: AdjointTable::for_group(seg.tag),
            identity_weight,
            weight: &seg.weight,
            chol: (!identity_weight).then(|| seg.weight.clone().cholesky().expect("checked SPD")),
            b: seg.b.iter().flat_map(|v| v.iter().copied()).collect(),
            b_dot: seg.b_dot.iter().flat_map(|v| v.iter().copied()).collect(),
        }
    }

    /// Right-hand side at sample interval `k`, local time `tau` in `[0, 1]`.
    fn rhs(&self, k: usize, tau: f64, z: &[f64], y: &mut [f64], out: &mut [f64]) {
        let n = self.n;
        let b = &self.b[k * n..(k + 1) * n];
        let bd = &self.b_dot[k * n..(k + 1) * n];
        if self.identity_weight {
            for i in 0..n {
                y[i] = z[i] - (b[i] + tau * bd[i]);
            }
        } else {
            for i in 0..n {
                let wz: f64 = (0..n).map(|j| self.weight[(i, j)] * z[j]).sum();
                y[i] = wz - (b[i] + tau * bd[i]);
            }
        }
        self.table.ad_transpose_mul(z, y, out);
        for i in 0..n {
            out[i] += bd[i];
        }
        if let Some(ch) = &self.chol {
            let sol = ch.solve(&DVector::from_column_slice(out));
            out.copy_from_slice(sol.as_slice());
        }
    }

    /// Classical RK4 from `zeta(0) = z0` over `[0, K - 1]` with `substeps`
    /// equal steps per frame. Returns the `K` integer-time samples, flattened.
    fn integrate(&self, z0: &[f64], samples: usize, substeps: usize) -> Result<Vec<f64>, PathError> {
        let n = self.n;
        let h = 1.0 / substeps as f64;
        let mut out = Vec::with_capacity(samples * n);
        out.extend_from_slice(z0);
        let mut z = z0.to_vec();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let (mut tmp, mut y) = (vec![0.0; n], vec![0.0; n]);
        for k in 0..samples.saturating_sub(1) {
            for s in 0..substeps {
                let tau = s as f64 * h;
                self.rhs(k, tau, &z, &mut y, &mut k1);
                for i in 0..n {
                    tmp[i] = z[i] + 0.5 * h * k1[i];
                }
                self.rhs(k, tau + 0.5 * h, &tmp, &mut y, &mut k2);
                for i in 0..n {
                    tmp[i] = z[i] + 0.5 * h * k2[i];
                }
                self.rhs(k, tau + 0.5 * h, &tmp, &mut y, &mut k3);
                for i in 0..n {
                    tmp[i] = z[i] + h * k3[i];
                }
                self.rhs(k, tau + h, &tmp, &mut y, &mut k4);
                for i in 0..n {
                    z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            if !z.iter().all(|c| c.is_finite()) {
                return Err(PathError::NonFinite(k + 1));
            }
            out.extend_from_slice(&z);
        }
        Ok(out)
    }
}

/// Frames per RK4 substep used by [`integrate_ep`].
pub const EP_SUBSTEPS: usize = 4;

/// Integrates the Euler-Poincare equation over the segment from `zeta0`,
/// returning `zeta` at every sample.
pub fn integrate_ep(seg: &PathSegment, zeta0: &DVector<f64>) -> Result<Vec<DVector<f64>>, PathError> {
    integrate_ep_with(seg, zeta0, EP_SUBSTEPS)
}

/// [`integrate_ep`] with a chosen number of RK4 substeps per frame.
pub fn integrate_ep_with(
    seg: &PathSegment,
    zeta0: &DVector<f64>,
    substeps: usize,
) -> Result<Vec<DVector<f64>>, PathError> {
    assert_eq!(zeta0.len(), seg.tag.dim(), "initial value has the wrong dimension");
    let sys = EpSystem::new(seg);
    let flat = sys.integrate(zeta0.as_slice(), seg.len(), substeps.max(1))?;
    Ok(flat.chunks(sys.n).map(DVector::from_column_slice).collect())
}

/// Keyframe selection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KeyframePolicy {
    pub interval: usize,
    /// Direction change that forces a keyframe, degrees.
    pub angle_threshold_deg: f64,
    /// Both translation steps must exceed this (m/frame) for the direction test.
    pub v_floor: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            interval: 30,
            angle_threshold_deg: 60.0,
            v_floor: 0.005,
        }
    }
}

/// Frame 0, the last frame, every `interval`-th frame, and every frame where
/// the translation direction turns by more than the threshold.
pub fn select_keyframes(path: &CameraPath, policy: &KeyframePolicy) -> Vec<usize> {
    let last = path.last_frame();
    let mut keys = BTreeSet::from([0, last]);
    if policy.interval > 0 {
        keys.extend((0..last).step_by(policy.interval));
    }
    let cos_max = policy.angle_threshold_deg.to_radians().cos();
    for i in 1..path.steps.len() {
        let a = path.steps[i - 1].translation();
        let b = path.steps[i].translation();
        let (na, nb) = (a.norm(), b.norm());
        if na > policy.v_floor && nb > policy.v_floor && a.dot(&b) / (na * nb) < cos_max {
            keys.insert(i);
        }
    }
    keys.into_iter().collect()
}

/// Shooting-method settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShootingOptions {
    /// Required distal residual.
    pub tolerance: f64,
    /// Jacobian evaluations allowed.
    pub max_iterations: usize,
    /// Intermediate targets on the path from the first distal pose to the goal.
    pub waypoints: usize,
    pub fd_step: f64,
    pub lambda: f64,
    pub substeps: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
            waypoints: 8,
            fd_step: 1e-6,
            lambda: 1e-6,
            substeps: EP_SUBSTEPS,
        }
    }
}

/// Optimal corrections for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationResult {
    pub start: usize,
    pub end: usize,
    pub zeta_star: Vec<Twist>,
    /// `g(zeta*_k)`.
    pub corrections: Vec<AffineTransform>,
    /// Stabilized poses for frames `start..=end`, started from
    /// `g_c(start) * start_constraint`.
    pub stabilized_poses: Vec<AffineTransform>,
    /// `g_stab^-1 g_c` for frames `start..=end`.
    pub render_transforms: Vec<AffineTransform>,
    pub start_constraint: AffineTransform,
    pub cost: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Coordinates of a transform near the identity: translation, then the
/// logarithm of the linear block in the group's coordinates.
fn chart(tag: GroupTag, m: &Matrix4<f64>) -> Option<DVector<f64>> {
    let l = m.fixed_view::<3, 3>(0, 0).into_owned();
    let u: Vec<f64> = match tag {
        GroupTag::Se3 => log_rot(&l).as_slice().to_vec(),
        GroupTag::Sim3 => {
            let det = l.determinant();
            if !(det > 0.0) {
                return None;
            }
            let s = det.ln() / 3.0;
            let w = log_rot(&(l * (-s).exp()));
            vec![w.x, w.y, w.z, s]
        }
        GroupTag::Sa3 | GroupTag::Ga3 => linear_vee(tag, &logm3(&l)?).0,
    };
    let mut c = DVector::zeros(tag.dim());
    c[0] = m[(0, 3)];
    c[1] = m[(1, 3)];
    c[2] = m[(2, 3)];
    c.rows_mut(3, u.len()).copy_from_slice(&u);
    c.iter().all(|x| x.is_finite()).then_some(c)
}

fn chart_inverse(tag: GroupTag, c: &DVector<f64>) -> Matrix4<f64> {
    let u = &c.as_slice()[3..];
    let l = match tag {
        GroupTag::Se3 | GroupTag::Sim3 => sigma(tag, u),
        GroupTag::Sa3 | GroupTag::Ga3 => expm3(&linear_hat(tag, u)),
    };
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&l);
    m[(0, 3)] = c[0];
    m[(1, 3)] = c[1];
    m[(2, 3)] = c[2];
    m
}

fn inverse4(m: &Matrix4<f64>, tag: GroupTag) -> Matrix4<f64> {
    *affine_inverse(&AffineTransform::from_parts_unchecked(
        tag,
        &m.fixed_view::<3, 3>(0, 0).into_owned(),
        &m.fixed_view::<3, 1>(0, 3).into_owned(),
    ))
    .expect("group elements are invertible")
    .matrix()
}

struct Shooter<'a> {
    seg: &'a PathSegment,
    sys: EpSystem<'a>,
    opts: ShootingOptions,
    step_mats: Vec<Matrix4<f64>>,
    desired: Matrix4<f64>,
}

impl<'a> Shooter<'a> {
    fn new(seg: &'a PathSegment, opts: ShootingOptions) -> Self {
        let step_mats: Vec<Matrix4<f64>> = seg.steps.iter().map(|x| *group_from_twist(x).matrix()).collect();
        let desired = step_mats.iter().fold(Matrix4::identity(), |acc, g| acc * g) * seg.end_constraint.matrix();
        Self {
            seg,
            sys: EpSystem::new(seg),
            opts,
            step_mats,
            desired,
        }
    }

    /// Samples and the achieved distal pose `C_start prod g(xi_k) g(zeta_k)`.
    fn shoot(&self, z0: &[f64]) -> Result<(Vec<f64>, Matrix4<f64>), PathError> {
        let n = self.sys.n;
        let samples = self.sys.integrate(z0, self.seg.len(), self.opts.substeps)?;
        let mut p = *self.seg.start_constraint.matrix();
        for (k, g) in self.step_mats.iter().enumerate() {
            let z = Twist::from_slice(self.seg.tag, &samples[k * n..(k + 1) * n])
                .map_err(|_| PathError::NonFinite(k))?;
            p = p * g * group_from_twist(&z).matrix();
        }
        Ok((samples, p))
    }

    fn residual(&self, target_inv: &Matrix4<f64>, p: &Matrix4<f64>) -> Option<DVector<f64>> {
        chart(self.seg.tag, &(target_inv * p))
    }

    fn solve(&self) -> Result<(Vec<f64>, usize, f64, bool), PathError> {
        let tag = self.seg.tag;
        let n = self.sys.n;
        let mut z: Vec<f64> = self.seg.zeta_bar[0].coords().as_slice().to_vec();
        let (mut samples, mut p) = self.shoot(&z)?;
        let desired_inv = inverse4(&self.desired, tag);

        // Artificial trajectory from the first distal pose to the goal.
        let m = self.opts.waypoints.max(1);
        let gap = chart(tag, &(inverse4(&p, tag) * self.desired));
        let targets: Vec<Matrix4<f64>> = match gap {
            Some(gap) => (1..=m)
                .map(|j| {
                    if j == m {
                        desired_inv
                    } else {
                        inverse4(&(p * chart_inverse(tag, &(&gap * (j as f64 / m as f64)))), tag)
                    }
                })
                .collect(),
            None => vec![desired_inv],
        };

        let final_norm = |p: &Matrix4<f64>| {
            self.residual(&desired_inv, p).map_or(f64::INFINITY, |r| r.norm())
        };
        let mut best = (final_norm(&p), samples.clone());
        let mut lambda = self.opts.lambda;
        let mut iterations = 0;

        for (j, target_inv) in targets.iter().enumerate() {
            let last = j + 1 == targets.len();
            loop {
                let r = match self.residual(target_inv, &p) {
                    Some(r) => r,
                    None => break,
                };
                let r_norm = r.norm();
                if r_norm <= self.opts.tolerance || iterations >= self.opts.max_iterations {
                    break;
                }
                iterations += 1;

                let mut jac = DMatrix::zeros(n, n);
                let mut zp = z.clone();
                for i in 0..n {
                    zp[i] = z[i] + self.opts.fd_step;
                    let (_, pp) = self.shoot(&zp)?;
                    zp[i] = z[i];
                    let rp = self.residual(target_inv, &pp).ok_or(PathError::NonFinite(0))?;
                    jac.set_column(i, &((rp - &r) / self.opts.fd_step));
                }
                let jtj = jac.transpose() * &jac;
                let jtr = jac.transpose() * &r;

                for _ in 0..12 {
                    let mut a = jtj.clone();
                    for i in 0..n {
                        a[(i, i)] += lambda;
                    }
                    let Some(delta) = a.cholesky().map(|c| c.solve(&(-&jtr))) else {
                        lambda *= 10.0;
                        continue;
                    };
                    let trial: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                    let accepted = match self.shoot(&trial) {
                        Ok((s_new, p_new)) => {
                            let better = self
                                .residual(target_inv, &p_new)
                                .is_some_and(|r_new| r_new.norm() < r_norm);
                            if better {
                                z = trial;
                                samples = s_new;
                                p = p_new;
                            }
                            better
                        }
                        Err(_) => false,
                    };
                    if accepted {
                        lambda /= 10.0;
                        break;
                    }
                    lambda *= 10.0;
                }

                let fin = final_norm(&p);
                if fin < best.0 {
                    best = (fin, samples.clone());
                }
                if !last {
                    break;
                }
            }
        }
        let converged = best.0 <= self.opts.tolerance;
        Ok((best.1, iterations, best.0, converged))
    }
}

/// Solves one segment. A segment that does not reach the tolerance within
/// the iteration budget returns its best iterate with `converged = false`.
pub fn shoot_segment(seg: &PathSegment, opts: &ShootingOptions) -> Result<StabilizationResult, PathError> {
    let tag = seg.tag;
    let n = tag.dim();
    let (flat, iterations, residual, converged) = Shooter::new(seg, *opts).solve()?;
    let zeta: Vec<DVector<f64>> = flat.chunks(n).map(DVector::from_column_slice).collect();
    let cost = seg.cost(&zeta);
    let zeta_star = zeta
        .into_iter()
        .map(|z| Twist::new(tag, z))
        .collect::<Result<Vec<_>, _>>()?;
    let corrections: Vec<AffineTransform> = zeta_star.iter().map(group_from_twist).collect();

    let mut g = seg.start_pose * seg.start_constraint;
    let mut c = seg.start_pose;
    let mut stabilized_poses = vec![g];
    let mut render_transforms = vec![affine_inverse(&g)? * c];
    for (xi, corr) in seg.steps.iter().zip(&corrections) {
        let step = group_from_twist(xi);
        g = g * step * *corr;
        c = c * step;
        stabilized_poses.push(g);
        render_transforms.push(affine_inverse(&g)? * c);
    }
    Ok(StabilizationResult {
        start: seg.start,
        end: seg.end,
        zeta_star,
        corrections,
        stabilized_poses,
        render_transforms,
        start_constraint: seg.start_constraint,
        cost,
        iterations,
        residual,
        converged,
    })
}

/// Stabilized poses and render transforms for every frame of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedPath {
    pub poses: Vec<AffineTransform>,
    /// `r(i) = g_stab(i)^-1 g_c(i)`: maps original-camera coordinates to
    /// stabilized-camera coordinates.
    pub render_transforms: Vec<AffineTransform>,
}

/// Chains segment results into one pose sequence:
/// `g_stab(0) = g_c(0) C_start` and `g_stab(i + 1) = g_stab(i) g(xi_i) g(zeta*_i)`.
pub fn stabilized_path(path: &CameraPath, results: &[StabilizationResult]) -> Result<StabilizedPath, PathError> {
    let first = results
        .first()
        .ok_or_else(|| PathError::SegmentMismatch("no segments".into()))?;
    if first.start != 0 {
        return Err(PathError::SegmentMismatch(format!("first segment starts at {}", first.start)));
    }
    for w in results.windows(2) {
        if w[0].end != w[1].start {
            return Err(PathError::SegmentMismatch(format!(
                "segment ending at {} followed by one starting at {}",
                w[0].end, w[1].start
            )));
        }
    }
    let last = results.last().unwrap();
    if last.end != path.last_frame() {
        return Err(PathError::SegmentMismatch(format!(
            "segments end at {}, path at {}",
            last.end,
            path.last_frame()
        )));
    }
    if results.iter().any(|r| r.corrections.len() != r.end - r.start) {
        return Err(PathError::SegmentMismatch("correction count differs from segment length".into()));
    }

    let mut g = path.poses[0] * first.start_constraint;
    let mut poses = vec![g];
    let corrections = results.iter().flat_map(|r| r.corrections.iter());
    for (xi, corr) in path.steps.iter().zip(corrections) {
        g = g * group_from_twist(xi) * *corr;
        poses.push(g);
    }
    let render_transforms = poses
        .iter()
        .zip(&path.poses)
        .map(|(s, c)| Ok(affine_inverse(s)? * *c))
        .collect::<Result<Vec<_>, LieError>>()?;
    Ok(StabilizedPath {
        poses,
        render_transforms,
    })
}

/// Settings for [`stabilize`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StabilizerConfig {
    pub keyframes: KeyframePolicy,
    pub shooting: ShootingOptions,
    /// Defaults to the identity.
    pub weight: Option<DMatrix<f64>>,
}

/// Segments the path, solves all segments in parallel and chains them.
///
/// `constraints` maps frames to the desired correction `g_c^-1 g_stab` there;
/// unlisted keyframes use the identity. Constrained frames become keyframes.
pub fn stabilize(
    path: &CameraPath,
    constraints: &BTreeMap<usize, AffineTransform>,
    config: &StabilizerConfig,
) -> Result<(Vec<StabilizationResult>, StabilizedPath), PathError> {
    if path.steps.is_empty() {
        return Err(PathError::BadSegment { start: 0, end: 0 });
    }
    let mut keys: BTreeSet<usize> = select_keyframes(path, &config.keyframes).into_iter().collect();
    for &f in constraints.keys() {
        if f > path.last_frame() {
            return Err(PathError::BadSegment {
                start: f,
                end: path.last_frame(),
            });
        }
        keys.insert(f);
    }
    let keys: Vec<usize> = keys.into_iter().collect();
    let constraint = |f: usize| constraints.get(&f).copied().unwrap_or_else(|| AffineTransform::identity(path.tag));
    let segments = keys
        .windows(2)
        .map(|w| PathSegment::new(path, w[0], w[1], config.weight.as_ref(), constraint(w[0]), constraint(w[1])))
        .collect::<Result<Vec<_>, _>>()?;
    let results = segments
        .par_iter()
        .map(|s| shoot_segment(s, &config.shooting))
        .collect::<Result<Vec<_>, _>>()?;
    let stabilized = stabilized_path(path, &results)?;
    Ok((results, stabilized))
}

/// Parses keyframe constraints: one `frame m00 m01 ... m33` line each
/// (row-major), `#` comments and blank lines ignored.
pub fn parse_constraints(text: &str, tag: GroupTag) -> Result<BTreeMap<usize, AffineTransform>, PathError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| PathError::Parse { line: n + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 {
            return Err(err(format!("expected 17 fields, found {}", fields.len())));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad frame index {:?}", fields[0])))?;
        let vals = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let g = AffineTransform::new(tag, Matrix4::from_row_slice(&vals)).map_err(|e| err(e.to_string()))?;
        if out.insert(frame, g).is_some() {
            return Err(err(format!("duplicate frame {frame}")));
        }
    }
    Ok(out)
}
