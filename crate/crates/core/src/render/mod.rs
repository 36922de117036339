//! Frame synthesis with a 2×2-cell content-preserving warp, and quality
//! metrics for stabilized sequences.

mod metrics;
mod warp;

pub use metrics::{
    compute_metrics, detect_failure, frame_quad, metric_cropping, metric_distortion,
    metric_stability, rotation_angle, MetricsReport, STABILITY_MIN_FRAMES,
};
pub use warp::{
    cpw_solve, reproject_control_points, warp_frame, ControlPair, WarpGrid, DEFAULT_ALPHA,
    MAX_CONTROL_POINTS,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("need at least 4 control pairs, got {0}")]
    TooFewControls(usize),
    #[error("warp system is rank deficient (rank {rank} of 18)")]
    RankDeficient { rank: usize },
    #[error("warp cell {0} is degenerate")]
    DegenerateCell(usize),
    #[error("sequence of {len} frames is shorter than {min}")]
    TooShort { len: usize, min: usize },
    #[error("frame {0}: median depth must be positive")]
    NonPositiveDepth(usize),
    #[error("{0}")]
    Mismatch(String),
}
