//! Joint refinement of camera intrinsics and camera-LiDAR extrinsics from
//! 2D-3D point correspondences, without calibration targets.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: unit quaternions and rigid transforms (SE(3)).
//! - [`camera`]: pinhole projection with radial-tangential distortion,
//!   including the iterative inverse and the valid-radius bound.
//! - [`residuals`]: the 15-parameter block, reprojection residuals, analytic
//!   Jacobians, and the Cauchy robust loss.
//! - [`solver`]: a deterministic Levenberg-Marquardt loop over one batch of
//!   correspondences.
//! - [`provider`]: correspondence sources, including a synthetic oracle with
//!   a per-iteration noise schedule and a constrained perturbation sampler.
//! - [`pipeline`]: the staged outer loop (joint solve, then frozen-intrinsic
//!   extrinsic polish) that ties provider and solver together.
//! - [`remap`]: camera-to-camera pixel remapping and image warping.
//! - [`metrics`]: error metrics against a reference calibration.
//! - [`io`]: file formats (CSV correspondences and scenes, JSON calibrations
//!   and configs, KITTI calibration text).

pub use nalgebra;

pub mod camera;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod provider;
pub mod remap;
pub mod residuals;
pub mod solver;

pub use camera::{CameraIntrinsics, PixelPoint, ProjectionResult, UnprojectError};
pub use geometry::{Pose, Quaternion};
pub use metrics::CalibrationError;
pub use pipeline::{RefinementConfig, RefinementError, RefinementTrace};
pub use provider::{CorrespondenceProvider, NoiseSchedule, PerturbationRanges, SyntheticOracle};
pub use residuals::{Correspondence, ParamBlock};
pub use solver::{solve, SolveOptions, SolveReport};
