//! Calibration error metrics against a reference.
//!
//! Extrinsics are scored by translation distance (cm) and shortest-arc
//! rotation angle (degrees). Intrinsics are scored by a ray-sampling
//! protocol: pixels drawn uniformly over the reference image are unprojected
//! with the reference model, each ray is projected under both models, and
//! the median per-ray pixel distance is reported. Rays invalid under either
//! model are excluded and counted.

use crate::camera::CameraIntrinsics;
use crate::geometry::{rotation_angle_between_deg, Pose};
use crate::PixelPoint;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default ray count for the intrinsic metric.
pub const DEFAULT_N_RAYS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no sampled ray was valid under both camera models")]
    NoValidRays,
}

/// Combined error report. Despite the name this is a measurement, not a
/// failure type; it mirrors the serialized report's field set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationError {
    pub translation_cm: f64,
    pub rotation_deg: f64,
    pub intrinsic_reproj_px: f64,
    pub n_rays: usize,
    pub excluded_rays: usize,
    pub seed: u64,
}

/// Result of the intrinsic ray-sampling metric alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntrinsicReprojError {
    pub median_px: f64,
    pub n_rays: usize,
    pub excluded_rays: usize,
}

/// Translation error in centimeters and shortest-arc rotation error in
/// degrees.
pub fn extrinsic_error(estimated: &Pose, truth: &Pose) -> (f64, f64) {
    let translation_cm = (estimated.translation - truth.translation).norm() * 100.0;
    let rotation_deg = rotation_angle_between_deg(&estimated.rotation, &truth.rotation);
    (translation_cm, rotation_deg)
}

/// Median pixel distance between the two models' projections of rays sampled
/// uniformly over the truth image. Lower-median tie-breaking for even
/// counts. Deterministic in `seed`.
pub fn intrinsic_reproj_error(
    estimated: &CameraIntrinsics,
    truth: &CameraIntrinsics,
    n_rays: usize,
    seed: u64,
) -> Result<IntrinsicReprojError, MetricsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let est_r_max = estimated.max_valid_radius();
    let truth_r_max = truth.max_valid_radius();
    let (w, h) = (truth.width as f64, truth.height as f64);
    let identity = Pose::IDENTITY;

    let mut distances = Vec::with_capacity(n_rays);
    let mut excluded = 0usize;
    for _ in 0..n_rays {
        let pixel = PixelPoint::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let Ok(ray) = truth.unproject_with_valid_radius(&pixel, truth_r_max) else {
            excluded += 1;
            continue;
        };
        let under_truth = truth.project_with_valid_radius(&ray, &identity, truth_r_max);
        let under_est = estimated.project_with_valid_radius(&ray, &identity, est_r_max);
        if !(under_truth.in_front && under_truth.within_valid_radius)
            || !(under_est.in_front && under_est.within_valid_radius)
        {
            excluded += 1;
            continue;
        }
        let du = under_est.pixel.u - under_truth.pixel.u;
        let dv = under_est.pixel.v - under_truth.pixel.v;
        distances.push((du * du + dv * dv).sqrt());
    }

    if distances.is_empty() {
        return Err(MetricsError::NoValidRays);
    }
    distances.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let median_px = distances[(distances.len() - 1) / 2];
    Ok(IntrinsicReprojError { median_px, n_rays, excluded_rays: excluded })
}

/// Full comparison of an estimated calibration against the truth.
pub fn evaluate_calibration(
    estimated_intrinsics: &CameraIntrinsics,
    estimated_pose: &Pose,
    truth_intrinsics: &CameraIntrinsics,
    truth_pose: &Pose,
    n_rays: usize,
    seed: u64,
) -> Result<CalibrationError, MetricsError> {
    let (translation_cm, rotation_deg) = extrinsic_error(estimated_pose, truth_pose);
    let reproj = intrinsic_reproj_error(estimated_intrinsics, truth_intrinsics, n_rays, seed)?;
    Ok(CalibrationError {
        translation_cm,
        rotation_deg,
        intrinsic_reproj_px: reproj.median_px,
        n_rays: reproj.n_rays,
        excluded_rays: reproj.excluded_rays,
        seed,
    })
}
