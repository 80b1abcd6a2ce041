//! Parser for the KITTI calibration text layout: `KEY: v v v ...` lines
//! with per-camera suffixes (`K_00`, `D_00`, `R_00`, `T_00`, `S_00`).
//!
//! File distortion order is `[k1, k2, t1, t2, k3]`; this artifact stores
//! `[k1, k2, k3, t1, t2]` internally. The reordering lives in exactly one
//! pair of functions so no other code can get it wrong.

use super::FileError;
use crate::camera::CameraIntrinsics;
use crate::geometry::{Pose, Quaternion};
use nalgebra::{Matrix3, Vector3};
use std::collections::HashMap;
use std::path::Path;

const ROTATION_TOLERANCE: f64 = 1e-6;

/// File order `[k1, k2, t1, t2, k3]` to internal `[k1, k2, k3, t1, t2]`.
pub fn distortion_from_file_order(d: [f64; 5]) -> [f64; 5] {
    [d[0], d[1], d[4], d[2], d[3]]
}

/// Internal `[k1, k2, k3, t1, t2]` to file order `[k1, k2, t1, t2, k3]`.
pub fn distortion_to_file_order(d: [f64; 5]) -> [f64; 5] {
    [d[0], d[1], d[3], d[4], d[2]]
}

struct Entry {
    line: usize,
    values: Vec<f64>,
}

fn parse_entries(path: &Path, text: &str) -> Result<HashMap<String, Entry>, FileError> {
    let mut entries = HashMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let Some((key, rest)) = trimmed.split_once(':') else {
            return Err(FileError::parse(path, line, format!("expected `key: values`, got {raw:?}")));
        };
        let key = key.trim();
        // Some distributions carry non-numeric metadata lines (e.g.
        // calib_time); keep them out of the numeric table but do not fail.
        let mut values = Vec::new();
        let mut numeric = true;
        for token in rest.split_whitespace() {
            match token.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => {
                    numeric = false;
                    break;
                }
            }
        }
        if !numeric {
            continue;
        }
        if entries.insert(key.to_string(), Entry { line, values }).is_some() {
            return Err(FileError::validation(path, line, format!("duplicate key {key:?}")));
        }
    }
    Ok(entries)
}

fn take<const N: usize>(
    path: &Path,
    entries: &HashMap<String, Entry>,
    key: &str,
) -> Result<[f64; N], FileError> {
    let entry = entries
        .get(key)
        .ok_or_else(|| FileError::MissingKey { path: path.to_owned(), key: key.to_string() })?;
    let got: &[f64] = &entry.values;
    got.try_into().map_err(|_| {
        FileError::parse(
            path,
            entry.line,
            format!("{key}: expected {N} values, got {}", got.len()),
        )
    })
}

fn dimension(path: &Path, line: usize, name: &str, value: f64) -> Result<u32, FileError> {
    let rounded = value.round();
    if !(value.is_finite() && (value - rounded).abs() < 1e-6 && rounded >= 1.0 && rounded <= u32::MAX as f64)
    {
        return Err(FileError::validation(path, line, format!("{name}: bad image dimension {value}")));
    }
    Ok(rounded as u32)
}

/// Loads camera `camera` (e.g. 0 for `K_00`) from a KITTI-style calibration
/// file: intrinsics from `K_xx`/`D_xx`/`S_xx`, extrinsics from `R_xx`/`T_xx`.
pub fn load_kitti_calib(
    path: impl AsRef<Path>,
    camera: u32,
) -> Result<(CameraIntrinsics, Pose), FileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    let entries = parse_entries(path, &text)?;

    let key = |prefix: &str| format!("{prefix}_{camera:02}");
    let k: [f64; 9] = take(path, &entries, &key("K"))?;
    let d: [f64; 5] = take(path, &entries, &key("D"))?;
    let s: [f64; 2] = take(path, &entries, &key("S"))?;
    let r: [f64; 9] = take(path, &entries, &key("R"))?;
    let t: [f64; 3] = take(path, &entries, &key("T"))?;

    let k_line = entries[&key("K")].line;
    for (index, expected) in [(1, 0.0), (3, 0.0), (6, 0.0), (7, 0.0), (8, 1.0)] {
        if (k[index] - expected).abs() > 1e-6 {
            return Err(FileError::validation(
                path,
                k_line,
                format!("{}: entry {index} must be {expected} (no skew), got {}", key("K"), k[index]),
            ));
        }
    }
    let s_line = entries[&key("S")].line;
    let [k1, k2, k3, t1, t2] = distortion_from_file_order(d);
    let intrinsics = CameraIntrinsics {
        fx: k[0],
        fy: k[4],
        cx: k[2],
        cy: k[5],
        k1,
        k2,
        k3,
        t1,
        t2,
        width: dimension(path, s_line, &key("S"), s[0])?,
        height: dimension(path, s_line, &key("S"), s[1])?,
    };
    if !intrinsics.is_valid() {
        return Err(FileError::validation(path, k_line, format!("{}: invalid intrinsics", key("K"))));
    }

    let rot = Matrix3::from_row_slice(&r);
    let deviation = (rot.transpose() * rot - Matrix3::identity()).abs().max();
    if deviation > ROTATION_TOLERANCE || rot.determinant() < 0.0 {
        return Err(FileError::NonOrthonormalRotation {
            path: path.to_owned(),
            deviation: deviation.max((rot.determinant() - 1.0).abs()),
        });
    }
    let pose = Pose::new(Quaternion::from_rotation_matrix(&rot), Vector3::new(t[0], t[1], t[2]));
    Ok((intrinsics, pose))
}
