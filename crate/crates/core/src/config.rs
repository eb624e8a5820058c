//! Pipeline configuration and its TOML file form.
//!
//! Every section and key is optional; omitted values take the defaults
//! below. Unknown keys are rejected.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boom::BoomConfig;
use crate::featurefit::MsacConfig;
use crate::gripper::GripperConfig;
use crate::montecarlo::DEFAULT_SAMPLES;
use crate::pointcloud::DEFAULT_NORMAL_K;

/// Seed used when neither the command line nor the config sets one.
pub const DEFAULT_SEED: u64 = 20_240_501;

/// Lowest pull-off force observed on every field grasp, newtons.
pub const FIELD_FORCE_FLOOR: f64 = 34.2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Half-angle of the cone of acceptable surface normals around the
    /// loading direction, radians.
    pub normal_cone_half_angle: f64,
    /// Minimum acceptable 5th-percentile pull-off force, newtons.
    pub min_p05_force: f64,
    pub mc_samples: usize,
    /// Neighbors used for near-scan normals.
    pub normal_k: usize,
    /// Far-scan voxel size, meters; 0 disables downsampling.
    pub voxel_size: f64,
    pub max_features: usize,
    /// Without a near rescan, the far cloud is cropped to this multiple of
    /// the fitted radius around the candidate center.
    pub crop_radius_factor: f64,
    /// World direction selecting the grasp apex on a candidate sphere.
    /// Unset, the apex is the surface point facing the boom base.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apex_direction: Option<Vector3<f64>>,
    pub msac: MsacConfig,
    pub gripper: GripperConfig,
    pub boom: BoomConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            normal_cone_half_angle: 30f64.to_radians(),
            min_p05_force: FIELD_FORCE_FLOOR,
            mc_samples: DEFAULT_SAMPLES,
            normal_k: DEFAULT_NORMAL_K,
            voxel_size: 0.01,
            max_features: 8,
            crop_radius_factor: 2.0,
            apex_direction: None,
            msac: MsacConfig::default(),
            gripper: GripperConfig::default(),
            boom: BoomConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.normal_cone_half_angle > 0.0 && self.normal_cone_half_angle < std::f64::consts::FRAC_PI_2) {
            return invalid(format!(
                "normal_cone_half_angle must lie in (0, pi/2), got {}",
                self.normal_cone_half_angle
            ));
        }
        if !(self.min_p05_force >= 0.0) {
            return invalid(format!("min_p05_force must be >= 0, got {}", self.min_p05_force));
        }
        if self.mc_samples == 0 {
            return invalid("mc_samples must be at least 1".into());
        }
        if self.normal_k < 3 {
            return invalid(format!("normal_k must be at least 3, got {}", self.normal_k));
        }
        if !(self.voxel_size >= 0.0) {
            return invalid(format!("voxel_size must be >= 0, got {}", self.voxel_size));
        }
        if !(self.crop_radius_factor > 0.0) {
            return invalid(format!("crop_radius_factor must be > 0, got {}", self.crop_radius_factor));
        }
        if self.apex_direction.is_some_and(|d| !(d.norm() > 0.0)) {
            return invalid("apex_direction must be non-zero".into());
        }
        self.msac.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gripper.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.boom.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

pub fn to_toml(cfg: &PipelineConfig) -> String {
    toml::to_string(cfg).expect("config serializes to TOML")
}
