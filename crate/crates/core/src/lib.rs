//! Video stabilization from dense 3D scene flow.
//!
//! * [`lie`]: twists, the decoupled exponential and adjoint matrices for
//!   SE(3), SIM(3), SA(3) and GA(3).
//! * [`estimate`]: camera twists as the mean of per-pixel induced twists.
//! * [`scene`]: intrinsics, depth maps, flow files and synthetic flow.
//! * [`path`]: camera paths and end-constrained optimal stabilization.
//! * [`render`]: grid warping of frames and sequence quality metrics.

pub mod estimate;
pub mod lie;
pub mod path;
pub mod render;
pub mod scene;
