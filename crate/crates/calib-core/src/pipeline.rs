//! Coupled iterative refinement: alternate correspondence acquisition and
//! optimization for `n_total` iterations, jointly estimating intrinsics and
//! extrinsics for the first `n_intr` iterations and freezing the intrinsics
//! afterwards. Each iteration feeds the updated parameters back to the
//! provider and, by default, replaces the previous correspondence set with
//! the fresh batch (accumulation is opt-in).

use crate::provider::{BatchMetadata, CorrespondenceProvider, ProviderError, ProviderRequest};
use crate::residuals::{Correspondence, ParamBlock};
use crate::solver::{solve, SolveError, SolveOptions, SolveReport, Termination};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    /// Iterations optimizing intrinsics and extrinsics jointly.
    pub n_intr: usize,
    /// Total iterations; the remainder run with intrinsics frozen.
    pub n_total: usize,
    pub joint_options: SolveOptions,
    pub extrinsic_options: SolveOptions,
    /// Accumulate batches across iterations instead of replacing them.
    pub accumulate: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            n_intr: 5,
            n_total: 11,
            joint_options: SolveOptions::default(),
            extrinsic_options: SolveOptions::default(),
            accumulate: false,
        }
    }
}

/// State captured after each completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSnapshot {
    pub params: ParamBlock,
    pub objective: f64,
    pub correspondence_count: usize,
    pub metadata: BatchMetadata,
    pub termination: Termination,
    pub solve_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub iterations: Vec<IterationSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefinementErrorKind {
    InvalidConfig(String),
    Provider(ProviderError),
    Solve(SolveError),
    /// The solver hit its damping ceiling; parameters from the last good
    /// iteration are in the trace.
    NumericalFailure,
}

/// A failed refinement, carrying the 0-based iteration that failed and the
/// trace of every iteration completed before it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("refinement iteration {iteration} failed: {}", describe(kind))]
pub struct RefinementError {
    pub iteration: usize,
    pub kind: RefinementErrorKind,
    pub partial_trace: RefinementTrace,
}

fn describe(kind: &RefinementErrorKind) -> String {
    match kind {
        RefinementErrorKind::InvalidConfig(msg) => format!("invalid configuration: {msg}"),
        RefinementErrorKind::Provider(e) => e.to_string(),
        RefinementErrorKind::Solve(e) => e.to_string(),
        RefinementErrorKind::NumericalFailure => "solver hit its damping ceiling".into(),
    }
}

/// Runs the staged refinement loop. `prior_anchor` is the principal-point
/// prior's anchor `c0`, passed through to every solve.
pub fn run_refinement(
    initial: &ParamBlock,
    prior_anchor: &Vector2<f64>,
    provider: &dyn CorrespondenceProvider,
    config: &RefinementConfig,
) -> Result<(ParamBlock, RefinementTrace), RefinementError> {
    let fail = |iteration, kind, trace: &RefinementTrace| RefinementError {
        iteration,
        kind,
        partial_trace: trace.clone(),
    };

    let mut trace = RefinementTrace::default();
    if config.n_total == 0 || config.n_intr > config.n_total {
        return Err(fail(
            0,
            RefinementErrorKind::InvalidConfig(format!(
                "need 1 <= n_intr <= n_total, got n_intr={} n_total={}",
                config.n_intr, config.n_total
            )),
            &trace,
        ));
    }

    let mut current = *initial;
    let mut accumulated: Vec<Correspondence> = Vec::new();
    for iteration in 0..config.n_total {
        let request = ProviderRequest { iteration_index: iteration, current_params: current };
        let batch = provider
            .correspondences(&request)
            .map_err(|e| fail(iteration, RefinementErrorKind::Provider(e), &trace))?;

        let data: &[Correspondence] = if config.accumulate {
            accumulated.extend_from_slice(&batch.correspondences);
            &accumulated
        } else {
            &batch.correspondences
        };

        let options = if iteration < config.n_intr {
            config.joint_options
        } else {
            SolveOptions { freeze_intrinsics: true, ..config.extrinsic_options }
        };

        let (params, report): (ParamBlock, SolveReport) =
            solve(data, &current, prior_anchor, &options)
                .map_err(|e| fail(iteration, RefinementErrorKind::Solve(e), &trace))?;
        if report.termination == Termination::NumericalFailure {
            return Err(fail(iteration, RefinementErrorKind::NumericalFailure, &trace));
        }

        current = params;
        trace.iterations.push(IterationSnapshot {
            params,
            objective: report.final_objective,
            correspondence_count: data.len(),
            metadata: batch.metadata,
            termination: report.termination,
            solve_iterations: report.iterations_run,
        });
    }

    Ok((current, trace))
}
