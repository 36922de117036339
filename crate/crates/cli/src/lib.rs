//! Command implementations behind the `flowstab` binary.
//!
//! Each subcommand reads and writes plain files so that the stages compose:
//! `synth` produces a dataset, `estimate` turns its flows into step
//! transforms, `stabilize` solves for the smooth path and the render
//! transforms, `warp` renders frames and `metrics` scores the result.

mod commands;
mod config;
pub mod io;
mod synth;

pub use commands::{
    cmd_estimate, cmd_metrics, cmd_stabilize, cmd_warp, mask_path, stab_image_path, EstimateReport, SegmentReport,
    StabilizeReport, StepReport, WarpReport, CAMERA_CSV, RENDER_CSV, STABILIZED_CSV, TRANSFORMS_CSV, TWISTS_CSV,
};
pub use config::{Overrides, PipelineConfig, DATASET_CONFIG};
pub use synth::{cmd_synth, generate_twists, render_plane, SynthSummary, Trajectory, PLANE_DEPTH};
