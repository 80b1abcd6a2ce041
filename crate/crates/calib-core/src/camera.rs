//! Pinhole camera with radial-tangential lens distortion.
//!
//! The forward chain for a camera-frame point `(X, Y, Z)`:
//!
//! 1. perspective division: `x = X/Z`, `y = Y/Z` (requires `Z > Z_MIN`);
//! 2. distortion: `x_d = x f(r) + 2 t1 x y + t2 (r^2 + 2 x^2)` and
//!    `y_d = y f(r) + 2 t2 x y + t1 (r^2 + 2 y^2)` with
//!    `f(r) = 1 + k1 r^2 + k2 r^4 + k3 r^6`, `r^2 = x^2 + y^2`;
//! 3. pixel mapping: `u = fx x_d + cx`, `v = fy y_d + cy` (no skew).
//!
//! The distortion polynomial is only injective while `r g(r) = r f(r)` is
//! increasing; [`CameraIntrinsics::max_valid_radius`] locates the first
//! stationary point of that map and everything beyond it is flagged invalid.

use nalgebra::{Matrix2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points closer to the image plane than this (in meters along the optical
/// axis) are treated as behind the camera.
pub const Z_MIN: f64 = 1e-6;

/// Iteration budget for the iterative undistortion, per method.
const UNPROJECT_MAX_ITERS: usize = 50;

/// Convergence tolerance for undistortion, in normalized image coordinates.
const UNPROJECT_TOL: f64 = 1e-10;

/// Search parameters for the valid-radius root: scan step, upper bound, and
/// bisection width. Normalized radii beyond 4 are 75 degree half-angles and
/// outside any lens this model can describe.
const RADIUS_SCAN_STEP: f64 = 1e-3;
const RADIUS_SCAN_MAX: f64 = 4.0;
const RADIUS_BISECT_TOL: f64 = 1e-8;

/// A pixel position; `u` is the column axis, `v` the row axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }
}

/// Outcome of projecting a 3D point.
///
/// `pixel` is only meaningful when `in_front` is true. `inside_image` implies
/// the pixel lies in `[0, width) x [0, height)`; it is independent of
/// `within_valid_radius`, which tracks whether the undistorted radius stayed
/// inside the injective range of the distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionResult {
    pub pixel: PixelPoint,
    pub in_front: bool,
    pub within_valid_radius: bool,
    pub inside_image: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum UnprojectError {
    #[error("undistortion did not converge within {UNPROJECT_MAX_ITERS} iterations")]
    NonConvergent,
    #[error("pixel lies outside the valid distortion radius")]
    OutsideValidRadius,
}

/// Intrinsic parameters: focal lengths and principal point in pixels,
/// distortion coefficients over normalized coordinates, and the image size
/// the model was calibrated for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub t1: f64,
    pub t2: f64,
    pub width: u32,
    pub height: u32,
}

/// Forward-chain intermediates for one camera-frame point, kept around
/// because the analytic Jacobians reuse every stage.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrameProjection {
    pub in_front: bool,
    /// Normalized (undistorted) coordinates.
    pub x: f64,
    pub y: f64,
    pub r2: f64,
    /// Distorted normalized coordinates.
    pub xd: f64,
    pub yd: f64,
    pub pixel: PixelPoint,
}

impl CameraIntrinsics {
    /// Checks the structural invariants: positive focals, finite parameters,
    /// nonzero image size.
    pub fn is_valid(&self) -> bool {
        let finite = [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.t1, self.t2,
        ]
        .iter()
        .all(|p| p.is_finite());
        finite && self.fx > 0.0 && self.fy > 0.0 && self.width > 0 && self.height > 0
    }

    /// Radial factor `f = 1 + k1 r^2 + k2 r^4 + k3 r^6` as a function of `r^2`.
    pub fn radial_factor(&self, r2: f64) -> f64 {
        1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
    }

    /// Applies the distortion to normalized coordinates.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let f = self.radial_factor(r2);
        let xd = x * f + 2.0 * self.t1 * x * y + self.t2 * (r2 + 2.0 * x * x);
        let yd = y * f + 2.0 * self.t2 * x * y + self.t1 * (r2 + 2.0 * y * y);
        (xd, yd)
    }

    /// Jacobian of [`distort`](Self::distort) with respect to `(x, y)`.
    pub fn distort_jacobian(&self, x: f64, y: f64) -> Matrix2<f64> {
        let r2 = x * x + y * y;
        let f = self.radial_factor(r2);
        // df/d(r^2)
        let fp = self.k1 + r2 * (2.0 * self.k2 + r2 * 3.0 * self.k3);
        let off = 2.0 * x * y * fp + 2.0 * self.t1 * x + 2.0 * self.t2 * y;
        Matrix2::new(
            f + 2.0 * x * x * fp + 2.0 * self.t1 * y + 6.0 * self.t2 * x,
            off,
            off,
            f + 2.0 * y * y * fp + 2.0 * self.t2 * x + 6.0 * self.t1 * y,
        )
    }

    /// Runs the forward chain on a point already expressed in the camera
    /// frame. When the point is not in front of the camera the remaining
    /// fields are NaN and must not be consumed.
    pub fn project_camera_frame(&self, cam: &Vector3<f64>) -> CameraFrameProjection {
        if cam.z <= Z_MIN {
            return CameraFrameProjection {
                in_front: false,
                x: f64::NAN,
                y: f64::NAN,
                r2: f64::NAN,
                xd: f64::NAN,
                yd: f64::NAN,
                pixel: PixelPoint::new(f64::NAN, f64::NAN),
            };
        }
        let x = cam.x / cam.z;
        let y = cam.y / cam.z;
        let (xd, yd) = self.distort(x, y);
        CameraFrameProjection {
            in_front: true,
            x,
            y,
            r2: x * x + y * y,
            xd,
            yd,
            pixel: PixelPoint::new(self.fx * xd + self.cx, self.fy * yd + self.cy),
        }
    }

    /// Projects a point given in the external (LiDAR) frame through `pose`.
    pub fn project(&self, point: &Vector3<f64>, pose: &crate::geometry::Pose) -> ProjectionResult {
        self.project_with_valid_radius(point, pose, self.max_valid_radius())
    }

    /// Same as [`project`](Self::project) with a precomputed
    /// [`max_valid_radius`](Self::max_valid_radius), for callers projecting
    /// many points under the same distortion.
    pub fn project_with_valid_radius(
        &self,
        point: &Vector3<f64>,
        pose: &crate::geometry::Pose,
        max_radius: f64,
    ) -> ProjectionResult {
        let cam = pose.apply(point);
        let chain = self.project_camera_frame(&cam);
        if !chain.in_front {
            return ProjectionResult {
                pixel: chain.pixel,
                in_front: false,
                within_valid_radius: false,
                inside_image: false,
            };
        }
        let within = chain.r2.sqrt() <= max_radius;
        let inside = chain.pixel.u >= 0.0
            && chain.pixel.u < self.width as f64
            && chain.pixel.v >= 0.0
            && chain.pixel.v < self.height as f64;
        ProjectionResult {
            pixel: chain.pixel,
            in_front: true,
            within_valid_radius: within,
            inside_image: inside,
        }
    }

    /// Inverts the distortion for one pixel and returns the unit-norm ray in
    /// the camera frame (positive `z`).
    pub fn unproject(&self, pixel: &PixelPoint) -> Result<Vector3<f64>, UnprojectError> {
        self.unproject_with_valid_radius(pixel, self.max_valid_radius())
    }

    /// Same as [`unproject`](Self::unproject) with a precomputed valid radius.
    pub fn unproject_with_valid_radius(
        &self,
        pixel: &PixelPoint,
        max_radius: f64,
    ) -> Result<Vector3<f64>, UnprojectError> {
        let xd = (pixel.u - self.cx) / self.fx;
        let yd = (pixel.v - self.cy) / self.fy;

        // The image of [0, max_radius] under the radial map bounds every
        // distorted radius with an undistorted preimage in range.
        if max_radius.is_finite() {
            let rd_max = max_radius * self.radial_factor(max_radius * max_radius);
            if (xd * xd + yd * yd).sqrt() > rd_max + UNPROJECT_TOL {
                return Err(UnprojectError::OutsideValidRadius);
            }
        }

        let solution = self
            .undistort_newton(xd, yd)
            .or_else(|| self.undistort_fixed_point(xd, yd));
        let (x, y) = solution.ok_or(UnprojectError::NonConvergent)?;

        if (x * x + y * y).sqrt() > max_radius + UNPROJECT_TOL {
            return Err(UnprojectError::OutsideValidRadius);
        }
        Ok(Vector3::new(x, y, 1.0).normalize())
    }

    fn undistort_newton(&self, xd: f64, yd: f64) -> Option<(f64, f64)> {
        let mut x = xd;
        let mut y = yd;
        for _ in 0..UNPROJECT_MAX_ITERS {
            let (dx, dy) = self.distort(x, y);
            let ex = dx - xd;
            let ey = dy - yd;
            if ex.abs().max(ey.abs()) < UNPROJECT_TOL {
                return Some((x, y));
            }
            let j = self.distort_jacobian(x, y);
            let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
            if det.abs() < 1e-14 {
                return None;
            }
            x -= (j[(1, 1)] * ex - j[(0, 1)] * ey) / det;
            y -= (j[(0, 0)] * ey - j[(1, 0)] * ex) / det;
            if !x.is_finite() || !y.is_finite() {
                return None;
            }
        }
        None
    }

    fn undistort_fixed_point(&self, xd: f64, yd: f64) -> Option<(f64, f64)> {
        let mut x = xd;
        let mut y = yd;
        for _ in 0..UNPROJECT_MAX_ITERS {
            let (dx, dy) = self.distort(x, y);
            if (dx - xd).abs().max((dy - yd).abs()) < UNPROJECT_TOL {
                return Some((x, y));
            }
            let r2 = x * x + y * y;
            let f = self.radial_factor(r2);
            if f.abs() < 1e-14 {
                return None;
            }
            x = (xd - (2.0 * self.t1 * x * y + self.t2 * (r2 + 2.0 * x * x))) / f;
            y = (yd - (2.0 * self.t2 * x * y + self.t1 * (r2 + 2.0 * y * y))) / f;
            if !x.is_finite() || !y.is_finite() {
                return None;
            }
        }
        None
    }

    /// Largest normalized radius on which the radial map `r f(r)` is still
    /// increasing, i.e. the first positive root of
    /// `1 + 3 k1 r^2 + 5 k2 r^4 + 7 k3 r^6`. Returns infinity when the map is
    /// monotone over the whole searched range.
    pub fn max_valid_radius(&self) -> f64 {
        let slope = |r: f64| {
            let u = r * r;
            1.0 + u * (3.0 * self.k1 + u * (5.0 * self.k2 + u * 7.0 * self.k3))
        };
        let steps = (RADIUS_SCAN_MAX / RADIUS_SCAN_STEP) as usize;
        let mut lo = 0.0;
        let mut hi = None;
        for i in 1..=steps {
            let r = i as f64 * RADIUS_SCAN_STEP;
            if slope(r) <= 0.0 {
                hi = Some(r);
                break;
            }
            lo = r;
        }
        let Some(mut hi) = hi else {
            return f64::INFINITY;
        };
        while hi - lo > RADIUS_BISECT_TOL {
            let mid = 0.5 * (lo + hi);
            if slope(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}
