//! Robust Levenberg-Marquardt over one batch of correspondences.
//!
//! The objective is `sum_i rho(|r_i|^2) + |(c - c0) / sigma|^2` where `r_i`
//! is the weighted reprojection residual, `rho` the Cauchy loss, and the
//! second term a prior tying the principal point to its anchor. Residuals of
//! points behind the camera are excluded from the normal equations but
//! counted per iteration.
//!
//! Robustness enters the normal equations through the standard corrector:
//! with `alpha` solving `alpha^2 - 2 alpha = -2 s rho''/rho'`, the residual
//! scales by `sqrt(rho') / (1 - alpha)` and the Jacobian by
//! `sqrt(rho') (J - alpha/s r r^T J)`; when `rho'' <= 0` (always true for
//! Cauchy) only the `sqrt(rho')` scaling applies. Both branches reproduce
//! the exact robust gradient.
//!
//! One iteration solves the damped normal equations and retries with doubled
//! damping until a step lowers the objective; accepted steps divide the
//! damping by three. Damping past `1e32` means the system is singular beyond
//! recovery and the solve aborts, handing back the input parameters.
//!
//! Everything is accumulated sequentially in correspondence order and solved
//! with an unpivoted dense Cholesky factorization, so a given input yields
//! bit-identical output on every run.

use crate::residuals::{
    cauchy_loss, principal_point_prior, reprojection_residual, residual_and_jacobian,
    Correspondence, ParamBlock, PARAM_COUNT,
};
use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum usable correspondences for a joint solve.
const MIN_CORRESPONDENCES_JOINT: usize = 8;
/// Minimum usable correspondences when every intrinsic is frozen.
const MIN_CORRESPONDENCES_EXTRINSIC: usize = 3;
/// Damping beyond this aborts the solve as numerically failed.
const DAMPING_CEILING: f64 = 1e32;
/// Damping never decays below this floor.
const DAMPING_FLOOR: f64 = 1e-12;
/// Floor applied to Hessian diagonal entries before damping scales them.
const DIAGONAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SolveError {
    #[error("{usable} usable correspondences, {required} required")]
    InsufficientCorrespondences { usable: usize, required: usize },
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Gradient, relative objective decrease, or step size dropped below
    /// its tolerance.
    Converged,
    /// Iteration budget exhausted before any tolerance was met.
    MaxIterations,
    /// Damping exceeded its ceiling; the input parameters were returned
    /// unchanged.
    NumericalFailure,
}

/// Outcome of one LM iteration (including its damping retries).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Objective after this iteration (unchanged unless a step was accepted).
    pub objective: f64,
    /// Damping in effect after this iteration.
    pub damping: f64,
    /// Norm of the last attempted step (zero when none was solved).
    pub step_norm: f64,
    /// Correspondences excluded for being behind the camera.
    pub excluded: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub final_objective: f64,
    pub iterations_run: usize,
    pub termination: Termination,
    pub per_iteration: Vec<IterationRecord>,
}

/// Solver knobs. `prior_sigma_px` is in pixels; an infinite value disables
/// the principal-point prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub objective_tolerance: f64,
    pub parameter_tolerance: f64,
    pub initial_damping: f64,
    pub cauchy_scale_px: f64,
    pub prior_sigma_px: f64,
    pub freeze_intrinsics: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iterations: 100,
            gradient_tolerance: 1e-10,
            objective_tolerance: 1e-12,
            parameter_tolerance: 1e-12,
            initial_damping: 1e-4,
            cauchy_scale_px: 1.0,
            prior_sigma_px: 10.0,
            freeze_intrinsics: false,
        }
    }
}

/// Robust objective at `params`, using the same exclusion rules as the
/// solver. Deterministic: terms accumulate in correspondence order.
pub fn evaluate_objective(
    correspondences: &[Correspondence],
    params: &ParamBlock,
    prior_anchor: &Vector2<f64>,
    options: &SolveOptions,
) -> f64 {
    objective_and_excluded(correspondences, params, prior_anchor, options).0
}

fn objective_and_excluded(
    correspondences: &[Correspondence],
    params: &ParamBlock,
    prior_anchor: &Vector2<f64>,
    options: &SolveOptions,
) -> (f64, usize) {
    let mut total = 0.0;
    let mut excluded = 0usize;
    for c in correspondences {
        match reprojection_residual(c, params) {
            Some(r) => total += cauchy_loss(r.norm_squared(), options.cauchy_scale_px).0,
            None => excluded += 1,
        }
    }
    let prior = principal_point_prior(params, prior_anchor, options.prior_sigma_px);
    (total + prior.norm_squared(), excluded)
}

struct NormalEquations {
    hessian: SMatrix<f64, PARAM_COUNT, PARAM_COUNT>,
    gradient_half: SVector<f64, PARAM_COUNT>,
}

/// Accumulates corrected normal equations. Frozen columns are already zero
/// in the per-residual Jacobians, so their rows and columns stay zero here.
fn build_normal_equations(
    correspondences: &[Correspondence],
    params: &ParamBlock,
    prior_anchor: &Vector2<f64>,
    options: &SolveOptions,
) -> NormalEquations {
    let mut hessian = SMatrix::<f64, PARAM_COUNT, PARAM_COUNT>::zeros();
    let mut gradient_half = SVector::<f64, PARAM_COUNT>::zeros();

    for c in correspondences {
        let Some((residual, jacobian)) = residual_and_jacobian(c, params, options.freeze_intrinsics)
        else {
            continue;
        };
        let s = residual.norm_squared();
        let (_, rho1, rho2) = cauchy_loss(s, options.cauchy_scale_px);
        let sqrt_rho1 = rho1.sqrt();
        let (res_c, jac_c) = if s == 0.0 || rho2 <= 0.0 {
            (residual * sqrt_rho1, jacobian * sqrt_rho1)
        } else {
            // Unreachable for Cauchy (rho'' < 0); kept for other losses.
            let d = 1.0 + 2.0 * s * rho2 / rho1;
            let alpha = 1.0 - d.max(0.0).sqrt();
            let corrected = jacobian - (residual * (residual.transpose() * jacobian)) * (alpha / s);
            (residual * (sqrt_rho1 / (1.0 - alpha)), corrected * sqrt_rho1)
        };
        hessian += jac_c.transpose() * jac_c;
        gradient_half += jac_c.transpose() * res_c;
    }

    if options.prior_sigma_px.is_finite() {
        let prior = principal_point_prior(params, prior_anchor, options.prior_sigma_px);
        let inv_sigma = 1.0 / options.prior_sigma_px;
        let mask = params.effective_freeze(options.freeze_intrinsics);
        // Prior rows touch only cx (index 2) and cy (index 3).
        for (param_idx, prior_row) in [(2usize, prior.x), (3usize, prior.y)] {
            if !mask[param_idx] {
                hessian[(param_idx, param_idx)] += inv_sigma * inv_sigma;
                gradient_half[param_idx] += inv_sigma * prior_row;
            }
        }
    }

    NormalEquations { hessian, gradient_half }
}

/// Minimizes the robust objective starting from `initial`.
///
/// On `NumericalFailure` the returned parameters are the input, unchanged;
/// otherwise they are the last accepted iterate. The report chronicles every
/// iteration in order; objectives are non-increasing.
pub fn solve(
    correspondences: &[Correspondence],
    initial: &ParamBlock,
    prior_anchor: &Vector2<f64>,
    options: &SolveOptions,
) -> Result<(ParamBlock, SolveReport), SolveError> {
    debug_assert!(initial.intrinsics.is_valid(), "initial intrinsics violate invariants");
    let mask = initial.effective_freeze(options.freeze_intrinsics);
    let active: Vec<usize> = (0..PARAM_COUNT).filter(|&i| !mask[i]).collect();

    let usable = correspondences
        .iter()
        .filter(|c| reprojection_residual(c, initial).is_some())
        .count();
    let required = if mask[..crate::residuals::INTRINSIC_PARAM_COUNT].iter().all(|&f| f) {
        MIN_CORRESPONDENCES_EXTRINSIC
    } else {
        MIN_CORRESPONDENCES_JOINT
    };
    if usable < required {
        return Err(SolveError::InsufficientCorrespondences { usable, required });
    }

    let mut current = *initial;
    let (mut objective, mut excluded) =
        objective_and_excluded(correspondences, &current, prior_anchor, options);
    let mut damping = options.initial_damping;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut termination = Termination::MaxIterations;

    'outer: for _ in 0..options.max_iterations {
        let eq = build_normal_equations(correspondences, &current, prior_anchor, options);

        // True gradient of the objective is 2 J^T r.
        if 2.0 * eq.gradient_half.abs().max() < options.gradient_tolerance {
            records.push(IterationRecord {
                objective,
                damping,
                step_norm: 0.0,
                excluded,
                accepted: false,
            });
            termination = Termination::Converged;
            break;
        }

        let n = active.len();
        let mut last_step_norm = 0.0;
        loop {
            // (H + lambda diag(H)) step = -g on the active submatrix.
            let mut system = DMatrix::<f64>::zeros(n, n);
            let mut rhs = DVector::<f64>::zeros(n);
            for (i, &pi) in active.iter().enumerate() {
                for (j, &pj) in active.iter().enumerate() {
                    system[(i, j)] = eq.hessian[(pi, pj)];
                }
                system[(i, i)] += damping * eq.hessian[(pi, pi)].max(DIAGONAL_FLOOR);
                rhs[i] = -eq.gradient_half[pi];
            }

            let mut rejected_tiny_step = false;
            if let Some(delta) = nalgebra::Cholesky::new(system).map(|ch| ch.solve(&rhs)) {
                let mut full = [0.0f64; PARAM_COUNT];
                for (i, &pi) in active.iter().enumerate() {
                    full[pi] = delta[i];
                }
                last_step_norm = delta.norm();
                let candidate = current.apply_step(&full, options.freeze_intrinsics);
                if candidate.intrinsics.is_valid() {
                    let (new_objective, new_excluded) =
                        objective_and_excluded(correspondences, &candidate, prior_anchor, options);
                    if new_objective.is_finite() && new_objective < objective {
                        let decrease = objective - new_objective;
                        current = candidate;
                        objective = new_objective;
                        excluded = new_excluded;
                        damping = (damping / 3.0).max(DAMPING_FLOOR);
                        records.push(IterationRecord {
                            objective,
                            damping,
                            step_norm: last_step_norm,
                            excluded,
                            accepted: true,
                        });
                        if decrease <= options.objective_tolerance * objective.max(1e-300)
                            || last_step_norm < options.parameter_tolerance
                        {
                            termination = Termination::Converged;
                            break 'outer;
                        }
                        continue 'outer;
                    }
                }
                // With growing damping, steps only shrink; a rejected step
                // this small means the current iterate cannot be improved.
                rejected_tiny_step = last_step_norm < options.parameter_tolerance;
            }

            damping *= 2.0;
            if rejected_tiny_step {
                records.push(IterationRecord {
                    objective,
                    damping,
                    step_norm: last_step_norm,
                    excluded,
                    accepted: false,
                });
                termination = Termination::Converged;
                break 'outer;
            }
            if damping > DAMPING_CEILING {
                records.push(IterationRecord {
                    objective,
                    damping,
                    step_norm: last_step_norm,
                    excluded,
                    accepted: false,
                });
                termination = Termination::NumericalFailure;
                break 'outer;
            }
        }
    }

    if termination == Termination::NumericalFailure {
        let (initial_objective, _) =
            objective_and_excluded(correspondences, initial, prior_anchor, options);
        let report = SolveReport {
            final_objective: initial_objective,
            iterations_run: records.len(),
            termination,
            per_iteration: records,
        };
        return Ok((*initial, report));
    }

    let report = SolveReport {
        final_objective: objective,
        iterations_run: records.len(),
        termination,
        per_iteration: records,
    };
    Ok((current, report))
}
