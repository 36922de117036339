use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Vector2};

use super::warp::polygon_area;
use super::RenderError;
use crate::lie::AffineTransform;
use crate::scene::Intrinsics;

/// Shortest sequence [`metric_stability`] accepts.
pub const STABILITY_MIN_FRAMES: usize = 8;
/// Highest DFT frequency index counted as low frequency.
const LOW_BAND: usize = 5;

/// Quality of a stabilized sequence. A failed sequence reports zero for all
/// three aggregate metrics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub cropping: f64,
    pub distortion: f64,
    pub stability: f64,
    pub failed: bool,
    pub per_frame_cropping: Vec<f64>,
    pub per_frame_distortion: Vec<f64>,
    /// Frames whose warped view misses the image.
    pub failed_frames: Vec<usize>,
}

/// Angle of the rotation closest to the linear block (its polar factor).
pub fn rotation_angle(g: &AffineTransform) -> f64 {
    let l = g.linear();
    let svd = l.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * vt;
    }
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Share of non-DC spectral energy in the lowest frequencies.
fn low_frequency_share(x: &[f64]) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let energy = |k: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let phase = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
            re += (v - mean) * phase.cos();
            im += (v - mean) * phase.sin();
        }
        re * re + im * im
    };
    let half = n / 2;
    let total: f64 = (1..=half).map(energy).sum();
    // sequences flat to 1e-12 count as constant
    if total <= (n as f64 * 1e-12).powi(2) {
        return 1.0;
    }
    let low: f64 = (1..=LOW_BAND.min(half)).map(energy).sum();
    (low / total).clamp(0.0, 1.0)
}

/// Mean over the three translation components and the rotation angle of the
/// share of spectral energy at frequencies 1..=5 among frequencies
/// 1..=N/2. Constant components score 1.
pub fn metric_stability(poses: &[AffineTransform]) -> Result<f64, RenderError> {
    if poses.len() < STABILITY_MIN_FRAMES {
        return Err(RenderError::TooShort {
            len: poses.len(),
            min: STABILITY_MIN_FRAMES,
        });
    }
    let mut sum = 0.0;
    for axis in 0..3 {
        let s: Vec<f64> = poses.iter().map(|p| p.translation()[axis]).collect();
        sum += low_frequency_share(&s);
    }
    let angles: Vec<f64> = poses.iter().map(rotation_angle).collect();
    sum += low_frequency_share(&angles);
    Ok(sum / 4.0)
}

fn frame_corners(k: &Intrinsics) -> [Vector2<f64>; 4] {
    let (w, h) = (k.width as f64 - 1.0, k.height as f64 - 1.0);
    [
        Vector2::new(0.0, 0.0),
        Vector2::new(w, 0.0),
        Vector2::new(w, h),
        Vector2::new(0.0, h),
    ]
}

/// Where the frame corners land after `r`, treating the scene as the plane
/// at `depth`. `None` if a corner ends up behind the camera.
pub fn frame_quad(r: &AffineTransform, depth: f64, k: &Intrinsics) -> Option<[Vector2<f64>; 4]> {
    let mut out = [Vector2::zeros(); 4];
    for (o, c) in out.iter_mut().zip(frame_corners(k)) {
        let x = r.transform_point(&k.unproject(c.x, c.y, depth));
        let (u, v) = k.project(&x)?;
        *o = Vector2::new(u, v);
    }
    Some(out)
}

/// Sutherland-Hodgman clip of `poly` to the axis-aligned box.
fn clip_to_box(poly: &[Vector2<f64>], w: f64, h: f64) -> Vec<Vector2<f64>> {
    let planes: [(Vector2<f64>, f64); 4] = [
        (Vector2::new(1.0, 0.0), 0.0),
        (Vector2::new(-1.0, 0.0), -w),
        (Vector2::new(0.0, 1.0), 0.0),
        (Vector2::new(0.0, -1.0), -h),
    ];
    let mut out = poly.to_vec();
    for (nrm, off) in planes {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let side = |p: &Vector2<f64>| nrm.dot(p) - off;
        for i in 0..input.len() {
            let (a, b) = (input[i], input[(i + 1) % input.len()]);
            let (da, db) = (side(&a), side(&b));
            if da >= 0.0 {
                out.push(a);
            }
            if (da >= 0.0) != (db >= 0.0) {
                out.push(a + (b - a) * (da / (da - db)));
            }
        }
    }
    out
}

fn frame_cropping(q: &[Vector2<f64>; 4], k: &Intrinsics) -> f64 {
    let (w, h) = (k.width as f64 - 1.0, k.height as f64 - 1.0);
    let clipped = clip_to_box(q, w, h);
    if clipped.len() < 3 {
        return 0.0;
    }
    (polygon_area(&clipped).abs() / (w * h)).clamp(0.0, 1.0)
}

/// `sigma_min / sigma_max` of the linear part of the least-squares affine map
/// from the frame corners to `q`.
fn frame_distortion(q: &[Vector2<f64>; 4], k: &Intrinsics) -> f64 {
    let src = frame_corners(k);
    let mean_s = src.iter().sum::<Vector2<f64>>() / 4.0;
    let mean_d = q.iter().sum::<Vector2<f64>>() / 4.0;
    let mut ss = Matrix2::zeros();
    let mut ds = Matrix2::zeros();
    for (s, d) in src.iter().zip(q) {
        let (s, d) = (s - mean_s, d - mean_d);
        ss += s * s.transpose();
        ds += d * s.transpose();
    }
    let Some(inv) = ss.try_inverse() else { return 0.0 };
    let sv = (ds * inv).singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if hi > 0.0 {
        lo / hi
    } else {
        0.0
    }
}

fn check_inputs(renders: &[AffineTransform], depths: &[f64]) -> Result<(), RenderError> {
    if renders.len() != depths.len() {
        return Err(RenderError::Mismatch(format!(
            "{} render transforms but {} depths",
            renders.len(),
            depths.len()
        )));
    }
    if let Some(i) = depths.iter().position(|d| !(*d > 0.0)) {
        return Err(RenderError::NonPositiveDepth(i));
    }
    Ok(())
}

/// Mean over frames of the share of the image covered by the warped frame.
pub fn metric_cropping(renders: &[AffineTransform], depths: &[f64], k: &Intrinsics) -> Result<f64, RenderError> {
    check_inputs(renders, depths)?;
    let per: Vec<f64> = renders
        .iter()
        .zip(depths)
        .map(|(r, d)| frame_quad(r, *d, k).map_or(0.0, |q| frame_cropping(&q, k)))
        .collect();
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

/// Worst per-frame anisotropy of the warped frame.
pub fn metric_distortion(renders: &[AffineTransform], depths: &[f64], k: &Intrinsics) -> Result<f64, RenderError> {
    check_inputs(renders, depths)?;
    Ok(renders
        .iter()
        .zip(depths)
        .map(|(r, d)| frame_quad(r, *d, k).map_or(0.0, |q| frame_distortion(&q, k)))
        .fold(1.0, f64::min))
}

/// Frames whose warped view misses the image entirely or crosses behind the
/// camera.
pub fn detect_failure(renders: &[AffineTransform], depths: &[f64], k: &Intrinsics) -> Result<Vec<usize>, RenderError> {
    check_inputs(renders, depths)?;
    Ok(renders
        .iter()
        .zip(depths)
        .enumerate()
        .filter(|(_, (r, d))| frame_quad(r, **d, k).is_none_or(|q| frame_cropping(&q, k) <= 0.0))
        .map(|(i, _)| i)
        .collect())
}

/// All metrics for a stabilized sequence.
pub fn compute_metrics(
    stabilized_poses: &[AffineTransform],
    renders: &[AffineTransform],
    depths: &[f64],
    k: &Intrinsics,
) -> Result<MetricsReport, RenderError> {
    check_inputs(renders, depths)?;
    if stabilized_poses.len() != renders.len() {
        return Err(RenderError::Mismatch(format!(
            "{} poses but {} render transforms",
            stabilized_poses.len(),
            renders.len()
        )));
    }
    let quads: Vec<Option<[Vector2<f64>; 4]>> = renders.iter().zip(depths).map(|(r, d)| frame_quad(r, *d, k)).collect();
    let per_frame_cropping: Vec<f64> = quads.iter().map(|q| q.map_or(0.0, |q| frame_cropping(&q, k))).collect();
    let per_frame_distortion: Vec<f64> = quads.iter().map(|q| q.map_or(0.0, |q| frame_distortion(&q, k))).collect();
    let failed_frames: Vec<usize> = per_frame_cropping
        .iter()
        .enumerate()
        .filter(|(_, c)| **c <= 0.0)
        .map(|(i, _)| i)
        .collect();
    let failed = !failed_frames.is_empty();
    let stability = metric_stability(stabilized_poses)?;
    let (cropping, distortion, stability) = if failed {
        (0.0, 0.0, 0.0)
    } else {
        (
            per_frame_cropping.iter().sum::<f64>() / per_frame_cropping.len() as f64,
            per_frame_distortion.iter().copied().fold(1.0, f64::min),
            stability,
        )
    };
    Ok(MetricsReport {
        cropping,
        distortion,
        stability,
        failed,
        per_frame_cropping,
        per_frame_distortion,
        failed_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::lie::{exp_rot, GroupTag};

    fn k() -> Intrinsics {
        Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480, 5000.0).unwrap()
    }

    fn translation_path(xs: &[f64]) -> Vec<AffineTransform> {
        xs.iter()
            .map(|x| AffineTransform::translation_only(GroupTag::Se3, &Vector3::new(*x, 0.0, 0.0)))
            .collect()
    }

    /// Energy share computed from an explicit complex DFT over all bins.
    fn oracle_share(x: &[f64]) -> f64 {
        let n = x.len();
        let spectrum: Vec<f64> = (0..n)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = 2.0 * PI * k as f64 * t as f64 / n as f64;
                    re += v * a.cos();
                    im -= v * a.sin();
                }
                re * re + im * im
            })
            .collect();
        let low: f64 = spectrum[1..=5].iter().sum();
        let all: f64 = spectrum[1..=n / 2].iter().sum();
        low / all
    }

    #[test]
    fn stability_constant_and_low_sinusoid() {
        let id = vec![AffineTransform::identity(GroupTag::Se3); 40];
        assert_eq!(metric_stability(&id).unwrap(), 1.0);
        let sine: Vec<f64> = (0..64).map(|t| (2.0 * PI * 2.0 * t as f64 / 64.0).sin()).collect();
        assert_relative_eq!(metric_stability(&translation_path(&sine)).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            metric_stability(&id[..5]),
            Err(RenderError::TooShort { len: 5, min: 8 })
        ));
    }

    #[test]
    fn stability_matches_dft_oracle_and_prefers_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..10 {
            let noise: Vec<f64> = (0..90).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_relative_eq!(low_frequency_share(&noise), oracle_share(&noise), epsilon = 1e-10);
            // moving average low-pass
            let smooth: Vec<f64> = (0..90)
                .map(|t| {
                    let lo = (t as usize).saturating_sub(6);
                    let hi = (t as usize + 6).min(89);
                    noise[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
                })
                .collect();
            let a = metric_stability(&translation_path(&noise)).unwrap();
            let b = metric_stability(&translation_path(&smooth)).unwrap();
            assert!(b > a, "{b} <= {a}");
        }
    }

    #[test]
    fn stability_ignores_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let x: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shifted: Vec<f64> = x.iter().map(|v| v + 3.7).collect();
        assert_relative_eq!(
            metric_stability(&translation_path(&x)).unwrap(),
            metric_stability(&translation_path(&shifted)).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn identity_renders_are_perfect() {
        let n = 12;
        let id = vec![AffineTransform::identity(GroupTag::Se3); n];
        let report = compute_metrics(&id, &id, &vec![2.0; n], &k()).unwrap();
        assert_eq!(report.cropping, 1.0);
        assert_relative_eq!(report.distortion, 1.0, epsilon = 1e-12);
        assert_eq!(report.stability, 1.0);
        assert!(!report.failed);
    }

    #[test]
    fn view_leaving_frame_fails_everything() {
        let n = 12;
        let mut renders = vec![AffineTransform::identity(GroupTag::Se3); n];
        renders[5] = AffineTransform::translation_only(GroupTag::Se3, &Vector3::new(5.0, 0.0, 0.0));
        let report = compute_metrics(&renders, &renders, &vec![2.0; n], &k()).unwrap();
        assert!(report.failed);
        assert_eq!((report.cropping, report.distortion, report.stability), (0.0, 0.0, 0.0));
        assert_eq!(report.failed_frames, vec![5]);
        assert_eq!(detect_failure(&renders, &vec![2.0; n], &k()).unwrap(), vec![5]);
        // behind the camera also fails
        renders[5] = AffineTransform::translation_only(GroupTag::Se3, &Vector3::new(0.0, 0.0, -3.0));
        assert_eq!(detect_failure(&renders, &vec![2.0; n], &k()).unwrap(), vec![5]);
    }

    #[test]
    fn zoom_in_keeps_full_coverage_without_distortion() {
        let d = 2.0;
        // plane at depth d moves to d/2: a 2x zoom about the principal point
        let zoom = AffineTransform::translation_only(GroupTag::Se3, &Vector3::new(0.0, 0.0, -d / 2.0));
        let q = frame_quad(&zoom, d, &k()).unwrap();
        let c = Vector2::new(319.5, 239.5);
        assert_relative_eq!(q[2] - c, (Vector2::new(639.0, 479.0) - c) * 2.0, epsilon = 1e-9);
        let renders = vec![zoom; 3];
        assert_eq!(metric_cropping(&renders, &[d; 3], &k()).unwrap(), 1.0);
        assert_relative_eq!(metric_distortion(&renders, &[d; 3], &k()).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn half_shift_crops_half_and_rotation_keeps_aspect() {
        let kk = k();
        let d = 2.0;
        let dx = 319.5 * d / kk.fx;
        let shift = AffineTransform::translation_only(GroupTag::Se3, &Vector3::new(dx, 0.0, 0.0));
        assert_relative_eq!(metric_cropping(&[shift], &[d], &kk).unwrap(), 0.5, epsilon = 1e-12);
        let roll = AffineTransform::from_parts_unchecked(GroupTag::Se3, &exp_rot(&Vector3::new(0.0, 0.0, 0.2)), &Vector3::zeros());
        assert_relative_eq!(metric_distortion(&[roll], &[d], &kk).unwrap(), 1.0, epsilon = 1e-12);
        let c = metric_cropping(&[roll], &[d], &kk).unwrap();
        assert!(c < 1.0 && c > 0.5);
        assert!(metric_cropping(&[shift], &[0.0], &kk).is_err());
    }

    #[test]
    fn rotation_angle_of_scaled_rotation() {
        let r = exp_rot(&Vector3::new(0.1, -0.2, 0.3));
        let g = AffineTransform::from_parts_unchecked(GroupTag::Sim3, &(r * 2.0), &Vector3::zeros());
        assert_relative_eq!(rotation_angle(&g), Vector3::new(0.1, -0.2, 0.3).norm(), epsilon = 1e-12);
    }
}
