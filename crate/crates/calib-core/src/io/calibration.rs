//! Versioned JSON calibration documents: the full 15-parameter model plus
//! the freeze mask, optionally carrying the solver report of a single solve
//! or the per-iteration trace of a refinement run.
//!
//! Floats are written in shortest round-trip decimal form; save followed by
//! load reproduces every finite value bit-exactly.

use super::FileError;
use crate::camera::CameraIntrinsics;
use crate::geometry::{Pose, Quaternion};
use crate::pipeline::RefinementTrace;
use crate::residuals::{ParamBlock, INTRINSIC_PARAM_COUNT};
use crate::solver::SolveReport;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CALIBRATION_SCHEMA_VERSION: &str = "calibration/1";

/// Unit tolerance for stored quaternions; anything worse is rejected, and
/// anything within is used as stored (never renormalized, to keep round
/// trips bit-exact).
const QUATERNION_UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtrinsicsDoc {
    /// w, x, y, z.
    quaternion: [f64; 4],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationDoc {
    schema_version: String,
    intrinsics: CameraIntrinsics,
    extrinsics: ExtrinsicsDoc,
    frozen_intrinsics: [bool; INTRINSIC_PARAM_COUNT],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    report: Option<SolveReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    refinement: Option<RefinementTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCalibration {
    pub params: ParamBlock,
    pub report: Option<SolveReport>,
    pub refinement: Option<RefinementTrace>,
}

fn validate_params(path: &Path, params: &ParamBlock) -> Result<(), FileError> {
    if !params.intrinsics.is_valid() {
        return Err(FileError::validation(path, 0, "intrinsics violate model invariants"));
    }
    let q = params.extrinsics.rotation;
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_UNIT_TOLERANCE {
        return Err(FileError::validation(
            path,
            0,
            format!("quaternion is not unit (norm {norm})"),
        ));
    }
    if !params.extrinsics.translation.iter().all(|v| v.is_finite()) {
        return Err(FileError::validation(path, 0, "translation is not finite"));
    }
    Ok(())
}

fn write_doc(path: &Path, doc: &CalibrationDoc) -> Result<(), FileError> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| FileError::parse(path, 0, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| FileError::io(path, e))
}

fn doc_for(path: &Path, params: &ParamBlock) -> Result<CalibrationDoc, FileError> {
    validate_params(path, params)?;
    let q = params.extrinsics.rotation;
    let t = params.extrinsics.translation;
    Ok(CalibrationDoc {
        schema_version: CALIBRATION_SCHEMA_VERSION.to_string(),
        intrinsics: params.intrinsics,
        extrinsics: ExtrinsicsDoc { quaternion: [q.w, q.x, q.y, q.z], translation: [t.x, t.y, t.z] },
        frozen_intrinsics: params.frozen_intrinsics,
        report: None,
        refinement: None,
    })
}

pub fn save_calibration(
    params: &ParamBlock,
    report: Option<&SolveReport>,
    path: impl AsRef<Path>,
) -> Result<(), FileError> {
    let path = path.as_ref();
    let mut doc = doc_for(path, params)?;
    doc.report = report.cloned();
    write_doc(path, &doc)
}

pub fn save_calibration_with_trace(
    params: &ParamBlock,
    trace: &RefinementTrace,
    path: impl AsRef<Path>,
) -> Result<(), FileError> {
    let path = path.as_ref();
    let mut doc = doc_for(path, params)?;
    doc.refinement = Some(trace.clone());
    write_doc(path, &doc)
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<LoadedCalibration, FileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| FileError::parse(path, e.line(), e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| FileError::parse(path, 0, "missing field `schema_version`"))?;
    if found != CALIBRATION_SCHEMA_VERSION {
        return Err(FileError::Version {
            path: path.to_owned(),
            found: found.to_string(),
            expected: CALIBRATION_SCHEMA_VERSION.to_string(),
        });
    }
    let doc: CalibrationDoc =
        serde_json::from_value(value).map_err(|e| FileError::parse(path, 0, e.to_string()))?;

    let [w, x, y, z] = doc.extrinsics.quaternion;
    let [tx, ty, tz] = doc.extrinsics.translation;
    let params = ParamBlock {
        intrinsics: doc.intrinsics,
        extrinsics: Pose::new(Quaternion::new(w, x, y, z), nalgebra::Vector3::new(tx, ty, tz)),
        frozen_intrinsics: doc.frozen_intrinsics,
    };
    validate_params(path, &params)?;
    Ok(LoadedCalibration { params, report: doc.report, refinement: doc.refinement })
}
