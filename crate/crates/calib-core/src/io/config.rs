//! The versioned JSON run configuration shared by every CLI subcommand.
//! One document type carries all knobs; each subcommand validates just the
//! slice it needs. Relative paths are resolved against the config file's
//! directory, and referenced input paths must exist at load time.

use super::FileError;
use crate::metrics::DEFAULT_N_RAYS;
use crate::pipeline::RefinementConfig;
use crate::provider::{NoiseSchedule, PerturbationRanges, SceneSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const RUN_CONFIG_SCHEMA_VERSION: &str = "runconfig/1";

fn default_n_rays() -> usize {
    DEFAULT_N_RAYS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: String,
    /// Observation CSV whose frame groups become per-iteration batches.
    #[serde(default)]
    pub correspondences: Option<PathBuf>,
    /// Scene CSV driving the synthetic matcher (needs `ground_truth`).
    #[serde(default)]
    pub scene: Option<PathBuf>,
    /// Starting parameters; when absent in scene mode, the truth is
    /// perturbed by `perturbation` under `seed`.
    #[serde(default)]
    pub initial_params: Option<PathBuf>,
    /// Truth parameters: a calibration JSON, or a KITTI text file
    /// (`kitti_camera` selects the camera).
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    /// Estimated calibration to score in `evaluate`.
    #[serde(default)]
    pub estimated: Option<PathBuf>,
    /// Source and target models for `remap`.
    #[serde(default)]
    pub source_params: Option<PathBuf>,
    #[serde(default)]
    pub target_params: Option<PathBuf>,
    /// Image to warp in `remap` (PNG or PGM/PPM).
    #[serde(default)]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub kitti_camera: u32,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub refinement: RefinementConfig,
    #[serde(default)]
    pub noise: NoiseSchedule,
    #[serde(default)]
    pub perturbation: PerturbationRanges,
    #[serde(default)]
    pub scene_spec: SceneSpec,
    #[serde(default = "default_n_rays")]
    pub n_rays: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: RUN_CONFIG_SCHEMA_VERSION.to_string(),
            correspondences: None,
            scene: None,
            initial_params: None,
            ground_truth: None,
            estimated: None,
            source_params: None,
            target_params: None,
            image: None,
            kitti_camera: 0,
            output_dir: None,
            seed: 0,
            refinement: RefinementConfig::default(),
            noise: NoiseSchedule::default(),
            perturbation: PerturbationRanges::default(),
            scene_spec: SceneSpec::default(),
            n_rays: DEFAULT_N_RAYS,
        }
    }
}

impl RunConfig {
    fn input_paths(&mut self) -> [(&'static str, &mut Option<PathBuf>); 7] {
        [
            ("correspondences", &mut self.correspondences),
            ("scene", &mut self.scene),
            ("initial_params", &mut self.initial_params),
            ("ground_truth", &mut self.ground_truth),
            ("estimated", &mut self.estimated),
            ("source_params", &mut self.source_params),
            ("target_params", &mut self.target_params),
        ]
    }

    pub fn validate_for_calibrate(&self) -> Result<(), String> {
        match (&self.correspondences, &self.scene) {
            (Some(_), Some(_)) => {
                Err("set exactly one of `correspondences` or `scene`, not both".into())
            }
            (None, None) => Err("calibrate needs `correspondences` or `scene`".into()),
            (Some(_), None) if self.initial_params.is_none() => {
                Err("correspondence-file calibration needs `initial_params`".into())
            }
            (None, Some(_)) if self.ground_truth.is_none() => {
                Err("scene calibration needs `ground_truth` to drive the synthetic matcher".into())
            }
            _ => Ok(()),
        }
    }

    pub fn validate_for_simulate(&self) -> Result<(), String> {
        if self.ground_truth.is_none() {
            return Err("simulate needs `ground_truth`".into());
        }
        Ok(())
    }

    pub fn validate_for_evaluate(&self) -> Result<(), String> {
        if self.estimated.is_none() || self.ground_truth.is_none() {
            return Err("evaluate needs `estimated` and `ground_truth`".into());
        }
        Ok(())
    }

    pub fn validate_for_remap(&self) -> Result<(), String> {
        if self.source_params.is_none() || self.target_params.is_none() {
            return Err("remap needs `source_params` and `target_params`".into());
        }
        Ok(())
    }
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig, FileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| FileError::parse(path, e.line(), e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| FileError::parse(path, 0, "missing field `schema_version`"))?;
    if found != RUN_CONFIG_SCHEMA_VERSION {
        return Err(FileError::Version {
            path: path.to_owned(),
            found: found.to_string(),
            expected: RUN_CONFIG_SCHEMA_VERSION.to_string(),
        });
    }
    let mut config: RunConfig =
        serde_json::from_value(value).map_err(|e| FileError::parse(path, 0, e.to_string()))?;

    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    for (name, field) in config.input_paths() {
        if let Some(p) = field {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(FileError::validation(
                    path,
                    0,
                    format!("{name}: referenced path does not exist: {}", p.display()),
                ));
            }
        }
    }
    if let Some(out) = &mut config.output_dir {
        if out.is_relative() {
            *out = base.join(&*out);
        }
    }
    Ok(config)
}

pub fn save_run_config(config: &RunConfig, path: impl AsRef<Path>) -> Result<(), FileError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(config)
        .map_err(|e| FileError::parse(path, 0, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| FileError::io(path, e))
}
