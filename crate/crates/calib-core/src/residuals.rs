//! Residuals and analytic Jacobians for the joint problem.
//!
//! The parameter block stacks 15 values in a fixed order:
//! `[fx, fy, cx, cy, k1, k2, k3, t1, t2, rot_x, rot_y, rot_z, t_x, t_y, t_z]`
//! where the rotation entries are a right-multiplicative tangent increment
//! applied as `q * exp(delta)` (see [`crate::geometry`]).
//!
//! A residual is `sqrt(w) * (observed - projected)`, so its Jacobian is the
//! negated, weighted Jacobian of the projection.

use crate::camera::CameraIntrinsics;
use crate::geometry::Pose;
use crate::PixelPoint;
use nalgebra::{Matrix2, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Number of intrinsic parameters in the block.
pub const INTRINSIC_PARAM_COUNT: usize = 9;
/// Total block size: intrinsics plus rotation tangent plus translation.
pub const PARAM_COUNT: usize = 15;
/// Intrinsic parameter names in block order.
pub const INTRINSIC_NAMES: [&str; INTRINSIC_PARAM_COUNT] =
    ["fx", "fy", "cx", "cy", "k1", "k2", "k3", "t1", "t2"];

/// One 3D point (in the LiDAR frame), its observed pixel, and a nonnegative
/// confidence weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub point: Vector3<f64>,
    pub pixel: PixelPoint,
    pub weight: f64,
}

/// The full state being estimated: intrinsics, the LiDAR-to-camera pose, and
/// a per-parameter freeze mask over the intrinsics (extrinsics are never
/// frozen).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: Pose,
    pub frozen_intrinsics: [bool; INTRINSIC_PARAM_COUNT],
}

impl ParamBlock {
    pub fn new(intrinsics: CameraIntrinsics, extrinsics: Pose) -> Self {
        ParamBlock {
            intrinsics,
            extrinsics,
            frozen_intrinsics: [false; INTRINSIC_PARAM_COUNT],
        }
    }

    pub fn intrinsic_param(&self, idx: usize) -> f64 {
        let k = &self.intrinsics;
        match idx {
            0 => k.fx,
            1 => k.fy,
            2 => k.cx,
            3 => k.cy,
            4 => k.k1,
            5 => k.k2,
            6 => k.k3,
            7 => k.t1,
            8 => k.t2,
            _ => panic!("intrinsic index {idx} out of range"),
        }
    }

    pub fn set_intrinsic_param(&mut self, idx: usize, value: f64) {
        let k = &mut self.intrinsics;
        match idx {
            0 => k.fx = value,
            1 => k.fy = value,
            2 => k.cx = value,
            3 => k.cy = value,
            4 => k.k1 = value,
            5 => k.k2 = value,
            6 => k.k3 = value,
            7 => k.t1 = value,
            8 => k.t2 = value,
            _ => panic!("intrinsic index {idx} out of range"),
        }
    }

    /// True for intrinsics excluded from optimization, either through the
    /// per-parameter mask or a blanket freeze.
    pub fn effective_freeze(&self, freeze_all_intrinsics: bool) -> [bool; PARAM_COUNT] {
        let mut mask = [false; PARAM_COUNT];
        for (i, frozen) in self.frozen_intrinsics.iter().enumerate() {
            mask[i] = *frozen || freeze_all_intrinsics;
        }
        mask
    }

    /// Applies a solver step. Frozen intrinsics are skipped entirely so they
    /// stay bit-identical; the rotation update renormalizes the quaternion.
    pub fn apply_step(&self, step: &[f64; PARAM_COUNT], freeze_all_intrinsics: bool) -> ParamBlock {
        let mask = self.effective_freeze(freeze_all_intrinsics);
        let mut out = *self;
        for i in 0..INTRINSIC_PARAM_COUNT {
            if !mask[i] && step[i] != 0.0 {
                out.set_intrinsic_param(i, self.intrinsic_param(i) + step[i]);
            }
        }
        let rot = Vector3::new(step[9], step[10], step[11]);
        if rot != Vector3::zeros() {
            out.extrinsics.rotation = self.extrinsics.rotation.local_update(&rot);
        }
        out.extrinsics.translation += Vector3::new(step[12], step[13], step[14]);
        out
    }
}

/// Weighted reprojection residual `sqrt(w) * (observed - projected)`, or
/// `None` when the point is behind the camera under the current parameters.
pub fn reprojection_residual(c: &Correspondence, p: &ParamBlock) -> Option<Vector2<f64>> {
    let cam = p.extrinsics.apply(&c.point);
    let chain = p.intrinsics.project_camera_frame(&cam);
    if !chain.in_front {
        return None;
    }
    let sw = c.weight.sqrt();
    Some(Vector2::new(
        sw * (c.pixel.u - chain.pixel.u),
        sw * (c.pixel.v - chain.pixel.v),
    ))
}

/// Residual and its 2x15 Jacobian with respect to the parameter block, with
/// frozen columns zeroed. `None` when the point is behind the camera.
pub fn residual_and_jacobian(
    c: &Correspondence,
    p: &ParamBlock,
    freeze_all_intrinsics: bool,
) -> Option<(Vector2<f64>, SMatrix<f64, 2, PARAM_COUNT>)> {
    let k = &p.intrinsics;
    let cam = p.extrinsics.apply(&c.point);
    let chain = k.project_camera_frame(&cam);
    if !chain.in_front {
        return None;
    }
    let sw = c.weight.sqrt();
    let residual = Vector2::new(
        sw * (c.pixel.u - chain.pixel.u),
        sw * (c.pixel.v - chain.pixel.v),
    );

    let (x, y, r2) = (chain.x, chain.y, chain.r2);
    let r4 = r2 * r2;

    // d(pixel)/d(intrinsics), rows (u, v).
    let mut dpix = SMatrix::<f64, 2, PARAM_COUNT>::zeros();
    dpix[(0, 0)] = chain.xd;
    dpix[(1, 1)] = chain.yd;
    dpix[(0, 2)] = 1.0;
    dpix[(1, 3)] = 1.0;
    dpix[(0, 4)] = k.fx * x * r2;
    dpix[(1, 4)] = k.fy * y * r2;
    dpix[(0, 5)] = k.fx * x * r4;
    dpix[(1, 5)] = k.fy * y * r4;
    dpix[(0, 6)] = k.fx * x * r4 * r2;
    dpix[(1, 6)] = k.fy * y * r4 * r2;
    dpix[(0, 7)] = k.fx * 2.0 * x * y;
    dpix[(1, 7)] = k.fy * (r2 + 2.0 * y * y);
    dpix[(0, 8)] = k.fx * (r2 + 2.0 * x * x);
    dpix[(1, 8)] = k.fy * 2.0 * x * y;

    // d(pixel)/d(camera point) = diag(fx, fy) * d(xd,yd)/d(x,y) * d(x,y)/d(cam)
    let dist = k.distort_jacobian(x, y);
    let inv_z = 1.0 / cam.z;
    let dnorm = SMatrix::<f64, 2, 3>::new(inv_z, 0.0, -x * inv_z, 0.0, inv_z, -y * inv_z);
    let dpix_dcam = Matrix2::new(k.fx, 0.0, 0.0, k.fy) * dist * dnorm;

    // d(cam)/d(rotation tangent) = -R [point]_x ; d(cam)/d(translation) = I
    let rot = p.extrinsics.rotation.to_rotation_matrix();
    let skew = SMatrix::<f64, 3, 3>::new(
        0.0, -c.point.z, c.point.y,
        c.point.z, 0.0, -c.point.x,
        -c.point.y, c.point.x, 0.0,
    );
    let dcam_drot = -rot * skew;
    let dpix_drot = dpix_dcam * dcam_drot;

    for i in 0..3 {
        dpix[(0, 9 + i)] = dpix_drot[(0, i)];
        dpix[(1, 9 + i)] = dpix_drot[(1, i)];
        dpix[(0, 12 + i)] = dpix_dcam[(0, i)];
        dpix[(1, 12 + i)] = dpix_dcam[(1, i)];
    }

    // residual = sqrt(w) (obs - pix)  =>  J = -sqrt(w) dpix
    let mut jac = dpix * (-sw);
    let mask = p.effective_freeze(freeze_all_intrinsics);
    for (i, frozen) in mask.iter().enumerate() {
        if *frozen {
            jac[(0, i)] = 0.0;
            jac[(1, i)] = 0.0;
        }
    }
    Some((residual, jac))
}

/// Cauchy robust loss evaluated at squared residual norm `s`:
/// `rho(s) = c^2 ln(1 + s / c^2)`. Returns `(rho, rho', rho'')`.
pub fn cauchy_loss(s: f64, scale: f64) -> (f64, f64, f64) {
    let c2 = scale * scale;
    let inv = 1.0 / (1.0 + s / c2);
    (c2 * (1.0 + s / c2).ln(), inv, -inv * inv / c2)
}

/// Principal-point prior residual `(c - c0) / sigma`. An infinite sigma
/// disables the prior (returns zeros).
pub fn principal_point_prior(p: &ParamBlock, anchor: &Vector2<f64>, sigma: f64) -> Vector2<f64> {
    if !sigma.is_finite() {
        return Vector2::zeros();
    }
    Vector2::new(
        (p.intrinsics.cx - anchor.x) / sigma,
        (p.intrinsics.cy - anchor.y) / sigma,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;
    use crate::provider::{sample_perturbed_params, PerturbationRanges};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base_params() -> ParamBlock {
        let intrinsics = CameraIntrinsics {
            fx: 718.0,
            fy: 716.2,
            cx: 620.5,
            cy: 187.9,
            k1: -0.30,
            k2: 0.08,
            k3: -0.004,
            t1: 0.0006,
            t2: -0.0004,
            width: 1242,
            height: 376,
        };
        let rot = Quaternion::from_axis_angle(&Vector3::new(0.2, -0.4, 0.9), 0.7);
        ParamBlock::new(intrinsics, Pose::new(rot, Vector3::new(0.12, -0.05, -0.27)))
    }

    /// Central finite difference of the residual along one block coordinate.
    fn fd_column(
        c: &Correspondence,
        p: &ParamBlock,
        idx: usize,
    ) -> Vector2<f64> {
        let h = if idx < INTRINSIC_PARAM_COUNT {
            1e-6 * p.intrinsic_param(idx).abs().max(1.0)
        } else {
            1e-6
        };
        let mut step = [0.0; PARAM_COUNT];
        step[idx] = h;
        let plus = reprojection_residual(c, &p.apply_step(&step, false)).unwrap();
        step[idx] = -h;
        let minus = reprojection_residual(c, &p.apply_step(&step, false)).unwrap();
        (plus - minus) / (2.0 * h)
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn jacobian_matches_finite_differences_over_random_configurations() {
        let truth = base_params();
        let ranges = PerturbationRanges::default();
        let mut worst = 0.0f64;
        for seed in 0..1000u64 {
            let p = sample_perturbed_params(&truth, &ranges, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
            let z: f64 = rng.random_range(2.0..50.0);
            let xn: f64 = rng.random_range(-0.55..0.55);
            let yn: f64 = rng.random_range(-0.25..0.25);
            let cam_point = Vector3::new(xn * z, yn * z, z);
            let point = p.extrinsics.inverse().apply(&cam_point);
            let proj = p.intrinsics.project_camera_frame(&cam_point);
            assert!(proj.in_front);
            let c = Correspondence {
                point,
                pixel: PixelPoint::new(
                    proj.pixel.u + rng.random_range(-3.0..3.0),
                    proj.pixel.v + rng.random_range(-3.0..3.0),
                ),
                weight: rng.random_range(0.1..1.0),
            };
            let (_, jac) = residual_and_jacobian(&c, &p, false).unwrap();
            for idx in 0..PARAM_COUNT {
                let fd = fd_column(&c, &p, idx);
                for row in 0..2 {
                    let err = relative_error(jac[(row, idx)], fd[row]);
                    worst = worst.max(err);
                    assert!(
                        err <= 1e-5,
                        "seed {seed} param {idx} row {row}: analytic {} vs fd {}",
                        jac[(row, idx)],
                        fd[row]
                    );
                }
            }
        }
        // The bound should not be saturated; leave headroom for regressions.
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn principal_point_columns_are_exact_constants() {
        let p = base_params();
        let c = Correspondence {
            point: p.extrinsics.inverse().apply(&Vector3::new(1.0, 0.5, 8.0)),
            pixel: PixelPoint::new(700.0, 200.0),
            weight: 1.0,
        };
        let (_, jac) = residual_and_jacobian(&c, &p, false).unwrap();
        // residual = obs - proj and d(proj u)/d(cx) = 1, weight 1.
        assert_eq!(jac[(0, 2)], -1.0);
        assert_eq!(jac[(1, 2)], 0.0);
        assert_eq!(jac[(0, 3)], 0.0);
        assert_eq!(jac[(1, 3)], -1.0);
    }

    #[test]
    fn frozen_intrinsic_columns_are_exact_zeros() {
        let mut p = base_params();
        p.frozen_intrinsics[0] = true; // fx
        p.frozen_intrinsics[4] = true; // k1
        let c = Correspondence {
            point: p.extrinsics.inverse().apply(&Vector3::new(1.0, 0.5, 8.0)),
            pixel: PixelPoint::new(700.0, 200.0),
            weight: 0.7,
        };
        let (_, jac) = residual_and_jacobian(&c, &p, false).unwrap();
        for row in 0..2 {
            assert_eq!(jac[(row, 0)], 0.0);
            assert_eq!(jac[(row, 4)], 0.0);
        }
        // Unfrozen columns keep their structural entries: fy drives the v
        // row and cx the u row.
        assert_ne!(jac[(1, 1)], 0.0);
        assert_ne!(jac[(0, 2)], 0.0);
        let (_, jac_all) = residual_and_jacobian(&c, &p, true).unwrap();
        for row in 0..2 {
            for col in 0..INTRINSIC_PARAM_COUNT {
                assert_eq!(jac_all[(row, col)], 0.0);
            }
            assert_ne!(jac_all[(row, 12)], 0.0);
        }
    }

    #[test]
    fn residual_is_invariant_under_quaternion_sign_flip() {
        let p = base_params();
        let mut flipped = p;
        flipped.extrinsics.rotation = Quaternion::new(
            -p.extrinsics.rotation.w,
            -p.extrinsics.rotation.x,
            -p.extrinsics.rotation.y,
            -p.extrinsics.rotation.z,
        );
        let c = Correspondence {
            point: Vector3::new(5.0, 1.0, 2.0),
            pixel: PixelPoint::new(700.0, 200.0),
            weight: 1.0,
        };
        let a = reprojection_residual(&c, &p);
        let b = reprojection_residual(&c, &flipped);
        match (a, b) {
            (Some(ra), Some(rb)) => assert!((ra - rb).norm() < 1e-9),
            (None, None) => {}
            _ => panic!("sign flip changed visibility"),
        }
    }

    #[test]
    fn residual_scales_with_root_weight() {
        let p = base_params();
        let point = p.extrinsics.inverse().apply(&Vector3::new(1.0, 0.5, 8.0));
        let pixel = p.intrinsics.project(&point, &p.extrinsics).pixel;
        let offset = PixelPoint::new(pixel.u + 1.0, pixel.v);
        let r1 = reprojection_residual(
            &Correspondence { point, pixel: offset, weight: 1.0 },
            &p,
        )
        .unwrap();
        assert!((r1 - Vector2::new(1.0, 0.0)).norm() < 1e-12);
        let r4 = reprojection_residual(
            &Correspondence { point, pixel: offset, weight: 4.0 },
            &p,
        )
        .unwrap();
        assert!((r4 - Vector2::new(2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_yields_none() {
        let p = ParamBlock::new(base_params().intrinsics, Pose::IDENTITY);
        let c = Correspondence {
            point: Vector3::new(0.0, 0.0, -3.0),
            pixel: PixelPoint::new(600.0, 180.0),
            weight: 1.0,
        };
        assert_eq!(reprojection_residual(&c, &p), None);
        assert!(residual_and_jacobian(&c, &p, false).is_none());
    }

    #[test]
    fn cauchy_loss_reference_values() {
        let (rho, d1, d2) = cauchy_loss(0.0, 1.0);
        assert_eq!(rho, 0.0);
        assert_eq!(d1, 1.0);
        assert_eq!(d2, -1.0);

        // c = 1: rho(1) = ln 2, rho'(1) = 1/2, rho''(1) = -1/4
        let (rho, d1, d2) = cauchy_loss(1.0, 1.0);
        assert!((rho - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((d1 - 0.5).abs() < 1e-15);
        assert!((d2 + 0.25).abs() < 1e-15);

        // c = 2, s = 4: rho = 4 ln 2, rho' = 1/2, rho'' = -1/16
        let (rho, d1, d2) = cauchy_loss(4.0, 2.0);
        assert!((rho - 4.0 * std::f64::consts::LN_2).abs() < 1e-14);
        assert!((d1 - 0.5).abs() < 1e-15);
        assert!((d2 + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn cauchy_loss_downweights_relative_to_quadratic() {
        for &s in &[0.01, 1.0, 100.0, 1e6] {
            let (rho, d1, _) = cauchy_loss(s, 1.0);
            assert!(rho <= s);
            assert!(d1 > 0.0 && d1 <= 1.0);
        }
    }

    #[test]
    fn prior_residual_scales_and_disables() {
        let mut p = base_params();
        p.intrinsics.cx = 630.5;
        p.intrinsics.cy = 180.9;
        let anchor = Vector2::new(620.5, 187.9);
        let r = principal_point_prior(&p, &anchor, 10.0);
        assert!((r.x - 1.0).abs() < 1e-12);
        assert!((r.y + 0.7).abs() < 1e-12);
        assert_eq!(principal_point_prior(&p, &anchor, f64::INFINITY), Vector2::zeros());
    }
}
