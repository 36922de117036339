//! Synthetic sequences: a textured plane two metres in front of the first
//! camera, seen along a generated or user-supplied trajectory.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use flowstab::lie::{group_from_twist, hat3, vee, AffineTransform, GroupTag, Twist};
use flowstab::path::integrate_path;
use flowstab::scene::{backproject, save_depth, synth_flow, write_flow, DepthMap, Intrinsics, SceneFlow, SynthMotion};
use image::GrayImage;
use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{PipelineConfig, DATASET_CONFIG};
use crate::io::{depth_path, flow_path, format_transforms, format_twists, image_path, read_twists, write_text};

/// Depth of the scene plane in the first camera's frame.
pub const PLANE_DEPTH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    /// No motion.
    Static,
    /// 1 cm per frame along the camera's x axis.
    Constant,
    /// Sums of slow sinusoids in every coordinate.
    RandomSmooth,
    /// A smooth path plus white noise on every step.
    Jitter,
    /// Per-step twists read from a twist table.
    File(PathBuf),
}

impl FromStr for Trajectory {
    type Err = std::convert::Infallible;

    /// Anything that is not a generator name is taken as a file path.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "static" => Self::Static,
            "constant" => Self::Constant,
            "random-smooth" => Self::RandomSmooth,
            "jitter" => Self::Jitter,
            other => Self::File(PathBuf::from(other)),
        })
    }
}

/// Twist from a translation and a 3×3 algebra element, projected onto the
/// group's algebra.
fn twist_of(tag: GroupTag, v: &Vector3<f64>, m: &Matrix3<f64>) -> Twist {
    let mut x = Matrix4::zeros();
    x.fixed_view_mut::<3, 3>(0, 0).copy_from(m);
    x.fixed_view_mut::<3, 1>(0, 3).copy_from(v);
    let coords = vee(tag, &x).expect("algebra element built for this group");
    Twist::new(tag, coords).expect("coordinates sized by vee")
}

/// Linear-part perturbation the group allows beyond rotation: scale for
/// SIM(3), traceless symmetric for SA(3), any symmetric for GA(3).
fn extra_generator(tag: GroupTag, e: &[f64; 6]) -> Matrix3<f64> {
    match tag {
        GroupTag::Se3 => Matrix3::zeros(),
        GroupTag::Sim3 => Matrix3::identity() * e[0],
        GroupTag::Sa3 | GroupTag::Ga3 => {
            let mut s = Matrix3::new(e[0], e[3], e[4], e[3], e[1], e[5], e[4], e[5], e[2]);
            if tag == GroupTag::Sa3 {
                s -= Matrix3::identity() * (s.trace() / 3.0);
            }
            s
        }
    }
}

struct Smooth {
    amp: f64,
    freq: [f64; 3],
    phase: [f64; 3],
    weight: [f64; 3],
}

impl Smooth {
    fn new(rng: &mut ChaCha8Rng, amp: f64) -> Self {
        let mut s = Smooth {
            amp,
            freq: [0.0; 3],
            phase: [0.0; 3],
            weight: [0.0; 3],
        };
        for k in 0..3 {
            s.freq[k] = rng.random_range(0.005..0.04);
            s.phase[k] = rng.random_range(0.0..TAU);
            s.weight[k] = rng.random_range(-1.0..1.0);
        }
        s
    }

    fn at(&self, t: f64) -> f64 {
        self.amp / 3.0 * (0..3).map(|k| self.weight[k] * (TAU * self.freq[k] * t + self.phase[k]).sin()).sum::<f64>()
    }
}

/// Per-step twists for a named generator. Deterministic in `seed`.
pub fn generate_twists(tag: GroupTag, trajectory: &Trajectory, steps: usize, seed: u64) -> Result<Vec<Twist>> {
    let smooth_or_jitter = |noise: bool| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tr: Vec<Smooth> = (0..3).map(|_| Smooth::new(&mut rng, 0.006)).collect();
        let rot: Vec<Smooth> = (0..3).map(|_| Smooth::new(&mut rng, 0.004)).collect();
        let ext: Vec<Smooth> = (0..6).map(|_| Smooth::new(&mut rng, 0.001)).collect();
        let nt = Normal::new(0.0, 0.003).unwrap();
        let nr = Normal::new(0.0, 0.002).unwrap();
        let ne = Normal::new(0.0, 0.0005).unwrap();
        (0..steps)
            .map(|i| {
                let t = i as f64;
                let mut v = Vector3::from_fn(|k, _| tr[k].at(t));
                let mut w = Vector3::from_fn(|k, _| rot[k].at(t));
                let mut e: [f64; 6] = std::array::from_fn(|k| ext[k].at(t));
                if noise {
                    v += Vector3::from_fn(|_, _| nt.sample(&mut rng));
                    w += Vector3::from_fn(|_, _| nr.sample(&mut rng));
                    e.iter_mut().for_each(|x| *x += ne.sample(&mut rng));
                }
                twist_of(tag, &v, &(hat3(&w) + extra_generator(tag, &e)))
            })
            .collect::<Vec<_>>()
    };
    Ok(match trajectory {
        Trajectory::Static => vec![Twist::zero(tag); steps],
        Trajectory::Constant => vec![twist_of(tag, &Vector3::new(0.01, 0.0, 0.0), &Matrix3::zeros()); steps],
        Trajectory::RandomSmooth => smooth_or_jitter(false),
        Trajectory::Jitter => smooth_or_jitter(true),
        Trajectory::File(path) => {
            let twists = read_twists(path)?;
            if let Some(t) = twists.iter().find(|t| t.tag() != tag) {
                bail!("{} holds {} twists, the pipeline group is {tag}", path.display(), t.tag());
            }
            twists
        }
    })
}

/// Test-card intensity at a point of the scene plane.
fn texture(x: f64, y: f64) -> u8 {
    let checker = if ((x * 4.0).floor() + (y * 4.0).floor()) as i64 % 2 == 0 { 12.0 } else { -12.0 };
    let v = 128.0 + 55.0 * (6.0 * x).sin() * (5.0 * y).cos() + 35.0 * (3.0 * (x + y) + 1.0).sin() + checker;
    v.round().clamp(0.0, 255.0) as u8
}

/// Depth map and image of the plane seen from `pose` (camera to world).
/// Depths are quantized exactly as the PNG stores them.
pub fn render_plane(pose: &AffineTransform, k: &Intrinsics) -> Result<(DepthMap, GrayImage)> {
    let (l, t) = (pose.linear(), pose.translation());
    let max_depth = u16::MAX as f64 / k.depth_scale;
    let mut depth = vec![0.0; k.width * k.height];
    let mut img = GrayImage::new(k.width as u32, k.height as u32);
    for j in 0..k.height {
        for i in 0..k.width {
            let ray = l * Vector3::new((i as f64 - k.cx) / k.fx, (j as f64 - k.cy) / k.fy, 1.0);
            let s = (PLANE_DEPTH - t.z) / ray.z;
            if !(s.is_finite() && s > 0.0 && s < max_depth) {
                continue;
            }
            let z = (s * k.depth_scale).round() / k.depth_scale;
            depth[j * k.width + i] = z;
            let p = t + ray * s;
            img.put_pixel(i as u32, j as u32, image::Luma([texture(p.x, p.y)]));
        }
    }
    Ok((DepthMap::new(k.width, k.height, depth)?, img))
}

/// What `synth` wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub dir: PathBuf,
    pub steps: usize,
    pub frames: usize,
}

/// Writes `steps` flow files, `steps + 1` depth maps and images, the
/// ground-truth tables and the dataset config into `config.out`.
pub fn cmd_synth(config: &PipelineConfig, trajectory: &Trajectory, steps: usize) -> Result<SynthSummary> {
    let dir = config.out.clone();
    let k = &config.intrinsics;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let twists = generate_twists(config.group, trajectory, steps, config.seed)?;
    if twists.is_empty() {
        bail!("the trajectory has no steps");
    }
    let path = integrate_path(config.group, &twists);
    let mut prev: Option<DepthMap> = None;
    for (i, pose) in path.poses.iter().enumerate() {
        let (depth, img) = render_plane(pose, k)?;
        save_depth(&depth_path(&dir, i), &depth, k)?;
        img.save(image_path(&dir, i))
            .with_context(|| format!("writing {}", image_path(&dir, i).display()))?;
        if let Some(d) = prev.take() {
            write_step_flow(&dir, i - 1, &d, &twists[i - 1], k)?;
        }
        prev = Some(depth);
    }
    let steps_g: Vec<AffineTransform> = twists.iter().map(group_from_twist).collect();
    write_text(&dir.join("gt_twists.csv"), &format_twists(&twists))?;
    write_text(&dir.join("gt_transforms.csv"), &format_transforms(&steps_g))?;
    write_text(&dir.join("gt_poses.csv"), &format_transforms(&path.poses))?;
    let mut stored = config.clone();
    stored.out = PathBuf::from(".");
    write_text(&dir.join(DATASET_CONFIG), &stored.to_key_values())?;
    Ok(SynthSummary {
        dir,
        steps: twists.len(),
        frames: path.poses.len(),
    })
}

fn write_step_flow(dir: &Path, i: usize, depth: &DepthMap, xi: &Twist, k: &Intrinsics) -> Result<()> {
    let grid = backproject(depth, k, 1)?;
    let field = synth_flow(&grid, &SynthMotion::Finite(group_from_twist(xi)));
    write_flow(&flow_path(dir, i), &SceneFlow::from_field(&field))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn generators_are_seeded_and_sized() {
        for tag in GroupTag::ALL {
            for traj in [Trajectory::RandomSmooth, Trajectory::Jitter] {
                let a = generate_twists(tag, &traj, 20, 7).unwrap();
                assert_eq!(a.len(), 20);
                assert_eq!(a, generate_twists(tag, &traj, 20, 7).unwrap());
                assert_ne!(a, generate_twists(tag, &traj, 20, 8).unwrap());
                assert!(a.iter().all(|t| t.tag() == tag && t.norm() < 0.1));
            }
        }
        let c = generate_twists(GroupTag::Sim3, &Trajectory::Constant, 3, 0).unwrap();
        assert_eq!(c[2].translation(), Vector3::new(0.01, 0.0, 0.0));
        assert!(c[2].linear().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn plane_depth_at_identity_is_constant() {
        let k = PipelineConfig::default().intrinsics;
        let (d, _) = render_plane(&AffineTransform::identity(GroupTag::Se3), &k).unwrap();
        assert_eq!(d.valid_count(), k.width * k.height);
        assert!(d.depth.iter().all(|&z| z == PLANE_DEPTH));
    }

    #[test]
    fn tilted_camera_sees_depth_gradient() {
        let k = PipelineConfig::default().intrinsics;
        let pose = group_from_twist(&Twist::from_slice(GroupTag::Se3, &[0.0, 0.0, 0.5, 0.0, 0.2, 0.0]).unwrap());
        let (d, _) = render_plane(&pose, &k).unwrap();
        // Rotation about y tilts the plane: depth varies along rows, not columns.
        let row = |i: usize| d.depth[60 * k.width + i];
        assert!(row(0) != row(k.width - 1));
        assert_relative_eq!(d.depth[10 * k.width + 40], d.depth[100 * k.width + 40], epsilon = 1e-3);
    }
}
