//! File formats: correspondence and scene CSV, calibration and run-config
//! JSON, the KITTI calibration text layout, and 8-bit raster images.
//!
//! Every loader rejects malformed input outright; nothing is silently
//! repaired. Errors carry the offending path and, where meaningful, a
//! 1-based line number (0 means the whole file).

mod calibration;
mod config;
mod correspondences;
mod image_io;
mod kitti;

pub use calibration::{
    load_calibration, save_calibration, save_calibration_with_trace, LoadedCalibration,
    CALIBRATION_SCHEMA_VERSION,
};
pub use config::{load_run_config, save_run_config, RunConfig, RUN_CONFIG_SCHEMA_VERSION};
pub use correspondences::{
    load_correspondences, load_scene, save_correspondences, save_scene, CorrespondenceFrame,
};
pub use image_io::{load_raster, save_raster};
pub use kitti::{distortion_from_file_order, distortion_to_file_order, load_kitti_calib};

use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: {message}")]
    Validation { path: PathBuf, line: usize, message: String },
    #[error("{path}: missing key {key:?}")]
    MissingKey { path: PathBuf, key: String },
    #[error("{path}: rotation matrix is not orthonormal (deviation {deviation:.3e})")]
    NonOrthonormalRotation { path: PathBuf, deviation: f64 },
    #[error("{path}: schema version {found:?}, expected {expected:?}")]
    Version { path: PathBuf, found: String, expected: String },
}

impl FileError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> FileError {
        FileError::Io { path: path.to_owned(), source }
    }

    pub(crate) fn parse(path: &Path, line: usize, message: impl Into<String>) -> FileError {
        FileError::Parse { path: path.to_owned(), line, message: message.into() }
    }

    pub(crate) fn validation(path: &Path, line: usize, message: impl Into<String>) -> FileError {
        FileError::Validation { path: path.to_owned(), line, message: message.into() }
    }
}

/// Parses a float that the format requires to be finite.
pub(crate) fn parse_finite(
    path: &Path,
    line: usize,
    field: &str,
    raw: &str,
) -> Result<f64, FileError> {
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| FileError::parse(path, line, format!("{field}: not a number: {raw:?}")))?;
    if !value.is_finite() {
        return Err(FileError::validation(path, line, format!("{field} is not finite: {raw:?}")));
    }
    Ok(value)
}
