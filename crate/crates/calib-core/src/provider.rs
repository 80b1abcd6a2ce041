//! Correspondence sources for the refinement loop.
//!
//! A provider is queried once per outer iteration and returns a batch of
//! 2D-3D correspondences plus provenance metadata. Two implementations ship:
//!
//! - [`SyntheticOracle`] projects a known scene through known true parameters
//!   and corrupts the pixels with iteration-scheduled Gaussian noise and a
//!   fixed fraction of uniform outliers. Randomness is fully determined by
//!   `(seed, iteration_index)`, so reruns are reproducible batch by batch.
//! - [`StaticProvider`] replays preloaded batches, e.g. from files.

use crate::camera::CameraIntrinsics;
use crate::residuals::{Correspondence, ParamBlock};
use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attempt budget for the rejection sampler before giving up.
const REJECTION_BUDGET: usize = 10_000;

/// Retry budget per scene point for frustum sampling.
const SCENE_RETRY_BUDGET: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("no scene point projects into the image under the true parameters")]
    EmptyFrustum,
    #[error("noise schedule has {schedule_len} entries but iteration {iteration} was requested")]
    ScheduleExhausted { iteration: usize, schedule_len: usize },
    #[error("perturbation sampler exhausted {attempts} attempts without satisfying the constraints")]
    RejectionBudgetExceeded { attempts: usize },
    #[error("provider has no batches to replay")]
    NoBatches,
}

/// Per-iteration observation noise plus a stationary outlier process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    /// Gaussian pixel sigma per outer iteration, non-increasing.
    pub per_iteration_pixel_sigma: Vec<f64>,
    /// Fraction of correspondences replaced by outliers, in `[0, 1]`.
    pub outlier_fraction: f64,
    /// Outlier pixel offsets are uniform in `[-spread, spread]` per axis.
    pub outlier_spread: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            per_iteration_pixel_sigma: vec![8.0, 5.0, 3.0, 2.0, 1.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            outlier_fraction: 0.05,
            outlier_spread: 50.0,
        }
    }
}

impl NoiseSchedule {
    /// A schedule usable for `n_total` iterations: long enough, non-negative,
    /// non-increasing sigmas, and a sane outlier model.
    pub fn validate(&self, n_total: usize) -> Result<(), String> {
        if self.per_iteration_pixel_sigma.len() < n_total {
            return Err(format!(
                "schedule covers {} iterations, {} required",
                self.per_iteration_pixel_sigma.len(),
                n_total
            ));
        }
        for w in self.per_iteration_pixel_sigma.windows(2) {
            if w[1] > w[0] {
                return Err("per-iteration sigma must be non-increasing".into());
            }
        }
        if self.per_iteration_pixel_sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err("sigma values must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err("outlier fraction must lie in [0, 1]".into());
        }
        if !self.outlier_spread.is_finite() || self.outlier_spread < 0.0 {
            return Err("outlier spread must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Provenance attached to each batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetadata {
    pub source: String,
    pub applied_sigma: Option<f64>,
    pub applied_outlier_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceBatch {
    pub correspondences: Vec<Correspondence>,
    pub metadata: BatchMetadata,
}

/// What the refinement loop tells a provider when asking for data. The
/// current estimate lets live front ends re-project; the synthetic oracle
/// deliberately ignores it and always detects against the truth.
#[derive(Debug, Clone)]
pub struct ProviderRequest {
    pub iteration_index: usize,
    pub current_params: ParamBlock,
}

pub trait CorrespondenceProvider {
    fn correspondences(&self, request: &ProviderRequest)
        -> Result<CorrespondenceBatch, ProviderError>;
}

/// Projects `scene` through the true parameters and corrupts the result
/// according to the schedule entry for `iteration`. Points behind the
/// camera, outside the valid distortion radius, or outside the image are
/// dropped before any noise is applied.
pub fn synthetic_correspondences(
    scene: &[Vector3<f64>],
    truth: &ParamBlock,
    schedule: &NoiseSchedule,
    iteration: usize,
    seed: u64,
) -> Result<Vec<Correspondence>, ProviderError> {
    let sigma = *schedule.per_iteration_pixel_sigma.get(iteration).ok_or(
        ProviderError::ScheduleExhausted {
            iteration,
            schedule_len: schedule.per_iteration_pixel_sigma.len(),
        },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    let gauss = Normal::new(0.0, sigma).expect("validated sigma");
    let r_max = truth.intrinsics.max_valid_radius();

    let mut out = Vec::with_capacity(scene.len());
    for point in scene {
        let res = truth
            .intrinsics
            .project_with_valid_radius(point, &truth.extrinsics, r_max);
        if !(res.in_front && res.within_valid_radius && res.inside_image) {
            continue;
        }
        let (du, dv) = if rng.random::<f64>() < schedule.outlier_fraction {
            (
                rng.random_range(-schedule.outlier_spread..=schedule.outlier_spread),
                rng.random_range(-schedule.outlier_spread..=schedule.outlier_spread),
            )
        } else {
            (gauss.sample(&mut rng), gauss.sample(&mut rng))
        };
        out.push(Correspondence {
            point: *point,
            pixel: crate::PixelPoint::new(res.pixel.u + du, res.pixel.v + dv),
            weight: 1.0,
        });
    }
    if out.is_empty() {
        return Err(ProviderError::EmptyFrustum);
    }
    Ok(out)
}

/// Synthetic correspondence source with known ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    pub scene: Vec<Vector3<f64>>,
    pub truth: ParamBlock,
    pub schedule: NoiseSchedule,
    pub seed: u64,
}

impl CorrespondenceProvider for SyntheticOracle {
    fn correspondences(
        &self,
        request: &ProviderRequest,
    ) -> Result<CorrespondenceBatch, ProviderError> {
        let correspondences = synthetic_correspondences(
            &self.scene,
            &self.truth,
            &self.schedule,
            request.iteration_index,
            self.seed,
        )?;
        let sigma = self.schedule.per_iteration_pixel_sigma[request.iteration_index];
        Ok(CorrespondenceBatch {
            correspondences,
            metadata: BatchMetadata {
                source: "synthetic".into(),
                applied_sigma: Some(sigma),
                applied_outlier_fraction: Some(self.schedule.outlier_fraction),
            },
        })
    }
}

/// Replays fixed batches; iteration `k` gets batch `min(k, len - 1)`, so a
/// single batch serves every iteration.
#[derive(Debug, Clone)]
pub struct StaticProvider {
    pub batches: Vec<Vec<Correspondence>>,
}

impl CorrespondenceProvider for StaticProvider {
    fn correspondences(
        &self,
        request: &ProviderRequest,
    ) -> Result<CorrespondenceBatch, ProviderError> {
        if self.batches.is_empty() {
            return Err(ProviderError::NoBatches);
        }
        let idx = request.iteration_index.min(self.batches.len() - 1);
        Ok(CorrespondenceBatch {
            correspondences: self.batches[idx].clone(),
            metadata: BatchMetadata {
                source: "static".into(),
                applied_sigma: None,
                applied_outlier_fraction: None,
            },
        })
    }
}

/// How far the initial guess may be perturbed from the truth. Focal lengths
/// and principal point scale multiplicatively (`p * (1 +/- relative)`);
/// distortion perturbs additively; the pose perturbs by a uniform rotation
/// axis with uniform angle, plus a uniform translation box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationRanges {
    pub fx_relative: f64,
    pub fy_relative: f64,
    pub cx_relative: f64,
    pub cy_relative: f64,
    pub k1_absolute: f64,
    pub k2_absolute: f64,
    pub k3_absolute: f64,
    pub t1_absolute: f64,
    pub t2_absolute: f64,
    pub rotation_deg: f64,
    pub translation_m: f64,
}

impl Default for PerturbationRanges {
    fn default() -> Self {
        PerturbationRanges {
            fx_relative: 0.10,
            fy_relative: 0.10,
            cx_relative: 0.10,
            cy_relative: 0.10,
            k1_absolute: 0.03,
            k2_absolute: 0.01,
            k3_absolute: 0.002,
            t1_absolute: 0.002,
            t2_absolute: 0.002,
            rotation_deg: 2.0,
            translation_m: 0.10,
        }
    }
}

/// Constraint set a perturbed model must satisfy to be a plausible starting
/// guess: the barrel/pincushion character is preserved, higher distortion
/// orders stay subordinate, tangential terms stay small, and the whole image
/// stays within the invertible part of the distortion.
pub fn perturbation_is_acceptable(original: &CameraIntrinsics, candidate: &CameraIntrinsics) -> bool {
    if !candidate.is_valid() {
        return false;
    }
    if original.k1 != 0.0 && candidate.k1 * original.k1 <= 0.0 {
        return false;
    }
    if candidate.k2.abs() > candidate.k1.abs() || candidate.k3.abs() > candidate.k2.abs() {
        return false;
    }
    if candidate.t1.abs() > 0.01 || candidate.t2.abs() > 0.01 {
        return false;
    }
    image_within_valid_radius(candidate)
}

/// True when all four image corners (pixel centers of the corner pixels) map
/// to distorted radii the model can invert.
fn image_within_valid_radius(cam: &CameraIntrinsics) -> bool {
    let r_max = cam.max_valid_radius();
    if r_max.is_infinite() {
        return true;
    }
    let rd_max = r_max * cam.radial_factor(r_max * r_max);
    let w = (cam.width - 1) as f64;
    let h = (cam.height - 1) as f64;
    for (u, v) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
        let xd = (u - cam.cx) / cam.fx;
        let yd = (v - cam.cy) / cam.fy;
        if (xd * xd + yd * yd).sqrt() > rd_max {
            return false;
        }
    }
    true
}

/// Draws an initial guess around `truth` by rejection sampling against
/// [`perturbation_is_acceptable`]. Deterministic in `seed`.
pub fn sample_perturbed_params(
    truth: &ParamBlock,
    ranges: &PerturbationRanges,
    seed: u64,
) -> Result<ParamBlock, ProviderError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = &truth.intrinsics;
    for _ in 0..REJECTION_BUDGET {
        let rel = |rng: &mut ChaCha8Rng, value: f64, h: f64| value * (1.0 + rng.random_range(-h..=h));
        let add = |rng: &mut ChaCha8Rng, value: f64, h: f64| value + rng.random_range(-h..=h);
        let candidate = CameraIntrinsics {
            fx: rel(&mut rng, k.fx, ranges.fx_relative),
            fy: rel(&mut rng, k.fy, ranges.fy_relative),
            cx: rel(&mut rng, k.cx, ranges.cx_relative),
            cy: rel(&mut rng, k.cy, ranges.cy_relative),
            k1: add(&mut rng, k.k1, ranges.k1_absolute),
            k2: add(&mut rng, k.k2, ranges.k2_absolute),
            k3: add(&mut rng, k.k3, ranges.k3_absolute),
            t1: add(&mut rng, k.t1, ranges.t1_absolute),
            t2: add(&mut rng, k.t2, ranges.t2_absolute),
            width: k.width,
            height: k.height,
        };

        // Uniform direction on the sphere, uniform angle magnitude.
        let az = rng.random_range(-1.0..=1.0f64);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - az * az).max(0.0).sqrt();
        let axis = Vector3::new(s * phi.cos(), s * phi.sin(), az);
        let angle = rng.random_range(-1.0..=1.0) * ranges.rotation_deg.to_radians();
        let dt = Vector3::new(
            rng.random_range(-ranges.translation_m..=ranges.translation_m),
            rng.random_range(-ranges.translation_m..=ranges.translation_m),
            rng.random_range(-ranges.translation_m..=ranges.translation_m),
        );

        if perturbation_is_acceptable(k, &candidate) {
            let mut out = *truth;
            out.intrinsics = candidate;
            out.extrinsics.rotation = truth.extrinsics.rotation.local_update(&(axis * angle));
            out.extrinsics.translation += dt;
            return Ok(out);
        }
    }
    Err(ProviderError::RejectionBudgetExceeded { attempts: REJECTION_BUDGET })
}

/// Scene synthesis parameters: point count and the depth range along the
/// optical axis, sampled log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub n_points: usize,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec { n_points: 1000, depth_min: 2.0, depth_max: 50.0 }
    }
}

/// Generates LiDAR-frame points guaranteed visible under `truth`: a target
/// pixel is drawn inside the image (3% border margin), unprojected, and
/// pushed to a log-uniform depth.
pub fn generate_scene(truth: &ParamBlock, spec: &SceneSpec, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = &truth.intrinsics;
    let r_max = cam.max_valid_radius();
    let to_lidar = truth.extrinsics.inverse();
    let (w, h) = (cam.width as f64, cam.height as f64);
    let log_ratio = (spec.depth_max / spec.depth_min).ln();

    let mut scene = Vec::with_capacity(spec.n_points);
    for _ in 0..spec.n_points {
        for _attempt in 0..SCENE_RETRY_BUDGET {
            let pixel = crate::PixelPoint::new(
                rng.random_range(0.03 * w..0.97 * w),
                rng.random_range(0.03 * h..0.97 * h),
            );
            let Ok(ray) = cam.unproject_with_valid_radius(&pixel, r_max) else {
                continue;
            };
            let z = spec.depth_min * (rng.random_range(0.0..1.0f64) * log_ratio).exp();
            let cam_point = ray * (z / ray.z);
            scene.push(to_lidar.apply(&cam_point));
            break;
        }
    }
    scene
}
