//! Shoulder kinematics: pan about world z, elevation above the xy plane,
//! then a straight rigid boom of variable extension.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance from the base below which a target is treated as the base
/// itself.
const SINGULAR_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    Pan,
    Elevation,
    Extension,
}

impl std::fmt::Display for Joint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Joint::Pan => "pan",
            Joint::Elevation => "elevation",
            Joint::Extension => "extension",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BoomError {
    #[error("{joint} = {value} outside [{min}, {max}]")]
    OutOfRange { joint: Joint, value: f64, min: f64, max: f64 },
    #[error("target unreachable: {joint} = {value} outside [{min}, {max}]")]
    Unreachable { joint: Joint, value: f64, min: f64, max: f64 },
    #[error("singular configuration: {0}")]
    Singularity(String),
    #[error("invalid boom config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, BoomError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoomConfig {
    pub base_position: Point3<f64>,
    pub pan_range: [f64; 2],
    pub elevation_range: [f64; 2],
    pub extension_range: [f64; 2],
    /// Usable depth range of the boom-tip camera, meters.
    pub stowed_camera_range: [f64; 2],
}

impl Default for BoomConfig {
    fn default() -> Self {
        Self {
            base_position: Point3::origin(),
            pan_range: [-PI, PI],
            elevation_range: [-FRAC_PI_4, FRAC_PI_2],
            extension_range: [0.3, 3.0],
            stowed_camera_range: [0.6, 6.0],
        }
    }
}

impl BoomConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("pan_range", self.pan_range),
            ("elevation_range", self.elevation_range),
            ("extension_range", self.extension_range),
            ("stowed_camera_range", self.stowed_camera_range),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(BoomError::Config(format!("{name} must satisfy min < max, got [{lo}, {hi}]")));
            }
        }
        if self.extension_range[0] < 0.0 {
            return Err(BoomError::Config("extension_range min must be >= 0".into()));
        }
        Ok(())
    }

    fn range(&self, joint: Joint) -> [f64; 2] {
        match joint {
            Joint::Pan => self.pan_range,
            Joint::Elevation => self.elevation_range,
            Joint::Extension => self.extension_range,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoomPose {
    pub pan: f64,
    pub elevation: f64,
    pub extension: f64,
}

impl BoomPose {
    fn joints(&self) -> [(Joint, f64); 3] {
        [
            (Joint::Pan, self.pan),
            (Joint::Elevation, self.elevation),
            (Joint::Extension, self.extension),
        ]
    }
}

/// Unit boom axis for a pan/elevation pair.
fn boom_axis(pan: f64, elevation: f64) -> Vector3<f64> {
    let (sp, cp) = pan.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Vector3::new(ce * cp, ce * sp, se)
}

fn first_violation(cfg: &BoomConfig, pose: &BoomPose) -> Option<(Joint, f64, [f64; 2])> {
    pose.joints().into_iter().find_map(|(joint, value)| {
        let [lo, hi] = cfg.range(joint);
        (!(value >= lo && value <= hi)).then_some((joint, value, [lo, hi]))
    })
}

pub fn forward_kinematics(cfg: &BoomConfig, pose: &BoomPose) -> Result<Point3<f64>> {
    if let Some((joint, value, [min, max])) = first_violation(cfg, pose) {
        return Err(BoomError::OutOfRange { joint, value, min, max });
    }
    Ok(cfg.base_position + boom_axis(pose.pan, pose.elevation) * pose.extension)
}

/// Closed-form pose that puts the tip on `target`.
pub fn inverse_kinematics(cfg: &BoomConfig, target: &Point3<f64>) -> Result<BoomPose> {
    let d = target - cfg.base_position;
    let extension = d.norm();
    if extension < SINGULAR_DISTANCE {
        return Err(BoomError::Singularity("target coincides with the boom base".into()));
    }
    let pose = BoomPose {
        pan: d.y.atan2(d.x),
        elevation: d.z.atan2(d.x.hypot(d.y)),
        extension,
    };
    if let Some((joint, value, [min, max])) = first_violation(cfg, &pose) {
        return Err(BoomError::Unreachable { joint, value, min, max });
    }
    Ok(pose)
}

/// Direction the gripper is pulled in at `pose`: from the tip back toward
/// the base.
pub fn loading_direction(cfg: &BoomConfig, pose: &BoomPose) -> Result<Vector3<f64>> {
    if !(pose.extension > 0.0) {
        return Err(BoomError::Singularity("zero boom extension".into()));
    }
    if let Some((joint, value, [min, max])) = first_violation(cfg, pose) {
        return Err(BoomError::OutOfRange { joint, value, min, max });
    }
    Ok(-boom_axis(pose.pan, pose.elevation))
}
