//! Robust MSAC fitting of graspable convex features.
//!
//! Hypotheses are scored with the truncated quadratic loss
//! `min(r², τ²)` summed over the region. Each hypothesis draws its minimal
//! sample from its own counter-derived stream and hypotheses are evaluated
//! in fixed-size batches, so a fit is a pure function of
//! `(cloud, region, config)` whatever the thread count.

mod cylinder;
mod msac;
mod sphere;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::{PointCloud, PointCloudError};

pub use cylinder::{cylinder_residual, fit_cylinder_msac, fit_cylinder_msac_traced};
pub use msac::MsacTrace;
pub use sphere::{
    circumsphere, find_spherical_regions, fit_sphere_msac, fit_sphere_msac_traced, sphere_residual,
};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("{0}")]
    Domain(String),
    #[error("no feature found: {0}")]
    NoFeatureFound(String),
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
}

pub type Result<T> = std::result::Result<T, FitError>;

/// Free parameters of the MSAC loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsacConfig {
    pub max_iterations: usize,
    /// Inlier band τ around the model surface, meters.
    pub residual_threshold: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub min_inliers: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for MsacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            residual_threshold: 0.006,
            r_min: 0.04,
            r_max: 0.5,
            min_inliers: 50,
            confidence: 0.99,
            seed: 0,
        }
    }
}

impl MsacConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_min > 0.0
            && self.r_min < self.r_max
            && self.r_max.is_finite()
            && self.residual_threshold > 0.0
            && self.residual_threshold.is_finite()
            && self.max_iterations >= 1
            && self.confidence > 0.0
            && self.confidence < 1.0;
        if ok {
            Ok(())
        } else {
            Err(FitError::Domain(format!("invalid MSAC config: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereFit {
    pub center: Point3<f64>,
    pub radius: f64,
    /// Sum of truncated squared residuals over the fitted region, m².
    pub msac_score: f64,
    /// Mean squared residual over the inliers, m².
    pub inlier_mse: f64,
    /// Cloud indices, ascending.
    pub inliers: Vec<usize>,
    pub iterations_used: usize,
}

impl SphereFit {
    /// Inlier mean squared residual, comparable across fits to different
    /// regions; the ranking key for extracted features.
    pub fn normalized_score(&self) -> f64 {
        self.inlier_mse
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderFit {
    pub axis_point: Point3<f64>,
    pub axis_dir: Vector3<f64>,
    pub radius: f64,
    pub msac_score: f64,
    pub inliers: Vec<usize>,
    pub iterations_used: usize,
}

/// A fitted feature of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    Sphere(SphereFit),
    Cylinder(CylinderFit),
}

impl Feature {
    pub fn radius(&self) -> f64 {
        match self {
            Feature::Sphere(s) => s.radius,
            Feature::Cylinder(c) => c.radius,
        }
    }

    pub fn inliers(&self) -> &[usize] {
        match self {
            Feature::Sphere(s) => &s.inliers,
            Feature::Cylinder(c) => &c.inliers,
        }
    }

    /// Outward unit normal of the feature surface at the point nearest `p`.
    pub fn outward_normal(&self, p: &Point3<f64>) -> Option<Vector3<f64>> {
        let v = match self {
            Feature::Sphere(s) => p - s.center,
            Feature::Cylinder(c) => {
                let v = p - c.axis_point;
                v - c.axis_dir * v.dot(&c.axis_dir)
            }
        };
        let n = v.norm();
        (n > 1e-12).then(|| v / n)
    }
}

impl From<SphereFit> for Feature {
    fn from(s: SphereFit) -> Self {
        Feature::Sphere(s)
    }
}

impl From<CylinderFit> for Feature {
    fn from(c: CylinderFit) -> Self {
        Feature::Cylinder(c)
    }
}

pub(crate) fn region_points(cloud: &PointCloud, region: &[usize]) -> Result<Vec<Point3<f64>>> {
    region
        .iter()
        .map(|&i| {
            if i < cloud.len() {
                Ok(cloud.point(i))
            } else {
                Err(FitError::Domain(format!("region index {i} out of range")))
            }
        })
        .collect()
}
