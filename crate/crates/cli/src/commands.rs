use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use flowstab::estimate::motion_between_frames;
use flowstab::lie::{twist_from_transform, AffineTransform, Twist};
use flowstab::path::{integrate_path, parse_constraints, stabilize, StabilizerConfig};
use flowstab::render::{
    compute_metrics, cpw_solve, reproject_control_points, warp_frame, MetricsReport, WarpGrid, MAX_CONTROL_POINTS,
};
use flowstab::scene::{backproject, load_depth, read_flow, DepthMap, Intrinsics};
use image::{DynamicImage, GrayImage, ImageBuffer, Pixel};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::io::{
    count_frames, depth_path, flow_path, format_transforms, format_twists, image_path, read_transforms, write_text,
};

pub const TRANSFORMS_CSV: &str = "transforms.csv";
pub const TWISTS_CSV: &str = "twists.csv";
pub const CAMERA_CSV: &str = "camera_poses.csv";
pub const STABILIZED_CSV: &str = "stabilized.csv";
pub const RENDER_CSV: &str = "render.csv";

fn create_out(config: &PipelineConfig) -> Result<&Path> {
    std::fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    Ok(&config.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_frame_depth(dir: &Path, i: usize, k: &Intrinsics) -> Result<DepthMap> {
    load_depth(&depth_path(dir, i), k).with_context(|| format!("frame {i}"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub valid_count: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub group: String,
    pub steps: Vec<StepReport>,
    pub low_confidence_steps: Vec<usize>,
    #[serde(skip)]
    pub twists: Vec<Twist>,
}

/// Estimates the motion between each pair of consecutive frames of a dataset
/// holding `depth_NNNN.png` for every frame and `flow_NNNN.qsf` for every
/// step. Writes the step transforms, twists and `estimate.json`.
pub fn cmd_estimate(config: &PipelineConfig, dataset: &Path) -> Result<EstimateReport> {
    let k = &config.intrinsics;
    let frames = count_frames(dataset);
    if frames < 2 {
        bail!("{} holds {frames} depth frames, need at least 2", dataset.display());
    }
    for i in 0..frames - 1 {
        if !flow_path(dataset, i).exists() {
            bail!("missing flow for frame {i}: {}", flow_path(dataset, i).display());
        }
    }
    let mut twists = Vec::with_capacity(frames - 1);
    let mut transforms = Vec::with_capacity(frames - 1);
    let mut steps = Vec::with_capacity(frames - 1);
    for i in 0..frames - 1 {
        let grid = backproject(&load_frame_depth(dataset, i, k)?, k, config.stride)?;
        let flow = read_flow(&flow_path(dataset, i)).with_context(|| format!("frame {i}"))?;
        let field = flow.to_field(&grid).with_context(|| format!("frame {i}"))?;
        let est = motion_between_frames(config.group, &field, &config.filter, config.recenter);
        steps.push(StepReport {
            step: i,
            valid_count: est.valid_count,
            low_confidence: est.low_confidence,
        });
        twists.push(est.twist);
        transforms.push(est.transform);
    }
    let out = create_out(config)?;
    write_text(&out.join(TRANSFORMS_CSV), &format_transforms(&transforms))?;
    write_text(&out.join(TWISTS_CSV), &format_twists(&twists))?;
    let report = EstimateReport {
        group: config.group.to_string(),
        low_confidence_steps: steps.iter().filter(|s| s.low_confidence).map(|s| s.step).collect(),
        steps,
        twists,
    };
    write_json(&out.join("estimate.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub start: usize,
    pub end: usize,
    pub cost: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizeReport {
    pub group: String,
    pub frames: usize,
    pub keyframes: Vec<usize>,
    pub segments: Vec<SegmentReport>,
    #[serde(skip)]
    pub stabilized: Vec<AffineTransform>,
    #[serde(skip)]
    pub render_transforms: Vec<AffineTransform>,
}

/// Stabilizes the path given by a table of step transforms. Writes the
/// original and stabilized poses, the render transforms and
/// `diagnostics.json`.
pub fn cmd_stabilize(config: &PipelineConfig, transforms: &Path, constraints: Option<&Path>) -> Result<StabilizeReport> {
    let steps = read_transforms(transforms)?;
    if steps.is_empty() {
        bail!("{} holds no transforms", transforms.display());
    }
    if let Some((i, g)) = steps.iter().enumerate().find(|(_, g)| g.tag() != config.group) {
        bail!("step {i} is a {} transform, the pipeline group is {}", g.tag(), config.group);
    }
    let twists = steps
        .iter()
        .enumerate()
        .map(|(i, g)| twist_from_transform(g).map_err(|e| anyhow!("step {i}: {e}")))
        .collect::<Result<Vec<_>>>()?;
    let path = integrate_path(config.group, &twists);
    let constraints = match constraints {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_constraints(&text, config.group).with_context(|| format!("in {}", p.display()))?
        }
        None => Default::default(),
    };
    let sc = StabilizerConfig {
        keyframes: config.keyframes.clone(),
        shooting: config.shooting.clone(),
        weight: None,
    };
    let (results, stab) = stabilize(&path, &constraints, &sc)?;

    let out = create_out(config)?;
    write_text(&out.join(CAMERA_CSV), &format_transforms(&path.poses))?;
    write_text(&out.join(STABILIZED_CSV), &format_transforms(&stab.poses))?;
    write_text(&out.join(RENDER_CSV), &format_transforms(&stab.render_transforms))?;
    let mut keyframes: Vec<usize> = results.iter().map(|r| r.start).collect();
    keyframes.push(path.last_frame());
    let report = StabilizeReport {
        group: config.group.to_string(),
        frames: path.frame_count(),
        keyframes,
        segments: results
            .iter()
            .map(|r| SegmentReport {
                start: r.start,
                end: r.end,
                cost: r.cost,
                iterations: r.iterations,
                residual: r.residual,
                converged: r.converged,
            })
            .collect(),
        stabilized: stab.poses,
        render_transforms: stab.render_transforms,
    };
    write_json(&out.join("diagnostics.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarpReport {
    pub frames: usize,
    /// Frames whose grid could not be solved; written black with an empty mask.
    pub failed_frames: Vec<usize>,
}

pub fn stab_image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("stab_{i:04}.png"))
}

pub fn mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("mask_{i:04}.png"))
}

fn warp_or_blank<P: Pixel<Subpixel = u8>>(
    img: &ImageBuffer<P, Vec<u8>>,
    grid: Option<&WarpGrid>,
) -> Result<(ImageBuffer<P, Vec<u8>>, Vec<bool>)> {
    Ok(match grid {
        Some(g) => warp_frame(img, g)?,
        None => (
            ImageBuffer::new(img.width(), img.height()),
            vec![false; (img.width() * img.height()) as usize],
        ),
    })
}

/// Renders every frame of a dataset through its render transform. Writes
/// `stab_NNNN.png`, coverage masks `mask_NNNN.png` and `warp.json`.
pub fn cmd_warp(config: &PipelineConfig, dataset: &Path, render: &Path) -> Result<WarpReport> {
    let k = &config.intrinsics;
    let renders = read_transforms(render)?;
    let frames = count_frames(dataset);
    if frames != renders.len() {
        bail!(
            "{} holds {} render transforms but {} has {frames} depth frames",
            render.display(),
            renders.len(),
            dataset.display()
        );
    }
    if let Some(i) = (0..frames).find(|&i| !image_path(dataset, i).exists()) {
        bail!("missing image for frame {i}: {}", image_path(dataset, i).display());
    }
    let out = create_out(config)?;
    let mut failed_frames = Vec::new();
    for (i, r) in renders.iter().enumerate() {
        let grid = backproject(&load_frame_depth(dataset, i, k)?, k, config.stride)?;
        let pairs = reproject_control_points(&grid, r, k, MAX_CONTROL_POINTS);
        let warp = cpw_solve(&pairs, config.alpha, k.width, k.height).ok();
        if warp.is_none() {
            failed_frames.push(i);
        }
        let img = image::open(image_path(dataset, i)).with_context(|| format!("frame {i}"))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if (w, h) != (k.width, k.height) {
            bail!("frame {i}: image is {w}x{h}, intrinsics say {}x{}", k.width, k.height);
        }
        let (warped, mask): (DynamicImage, Vec<bool>) = match img {
            DynamicImage::ImageLuma8(g) => {
                let (o, m) = warp_or_blank(&g, warp.as_ref())?;
                (o.into(), m)
            }
            other => {
                let (o, m) = warp_or_blank(&other.to_rgb8(), warp.as_ref())?;
                (o.into(), m)
            }
        };
        warped
            .save(stab_image_path(out, i))
            .with_context(|| format!("writing {}", stab_image_path(out, i).display()))?;
        let mask_img = GrayImage::from_vec(w as u32, h as u32, mask.iter().map(|&c| if c { 255 } else { 0 }).collect())
            .expect("mask sized from the image");
        mask_img
            .save(mask_path(out, i))
            .with_context(|| format!("writing {}", mask_path(out, i).display()))?;
    }
    let report = WarpReport { frames, failed_frames };
    write_json(&out.join("warp.json"), &report)?;
    Ok(report)
}

/// Scores a stabilized sequence from the output of `stabilize` and the
/// dataset's depth maps. Writes `metrics.json`.
pub fn cmd_metrics(config: &PipelineConfig, dataset: &Path, stabilized: &Path) -> Result<MetricsReport> {
    let k = &config.intrinsics;
    let poses = read_transforms(&stabilized.join(STABILIZED_CSV))?;
    let renders = read_transforms(&stabilized.join(RENDER_CSV))?;
    let depths = (0..renders.len())
        .map(|i| {
            load_frame_depth(dataset, i, k)?
                .median_depth()
                .ok_or_else(|| anyhow!("frame {i} has no valid depth"))
        })
        .collect::<Result<Vec<f64>>>()?;
    let report = compute_metrics(&poses, &renders, &depths, k)?;
    let out = create_out(config)?;
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}
