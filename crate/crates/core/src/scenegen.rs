//! Synthetic range scans of analytic scenes.
//!
//! A virtual depth camera at `sensor_origin` casts a regular grid of rays
//! over its field of view, keeps the first hit on any primitive, perturbs
//! the range with Gaussian noise and drops returns outside the camera's
//! working range. A fraction of the returns is then replaced by uniform
//! samples from an outlier box. Every point carries the label of the
//! primitive that produced it.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::PointCloud;
use crate::rng;

/// Working range of the simulated depth camera, meters.
pub const SENSOR_RANGE: [f64; 2] = [0.6, 6.0];

const MAX_OUTLIER_TRIES: usize = 1000;
const HIT_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("no primitive intersects the sensed sector within range")]
    EmptyScan,
    #[error("scene file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SceneError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
    Cylinder {
        axis_point: Point3<f64>,
        axis_dir: Vector3<f64>,
        radius: f64,
        /// Extent along the axis either side of `axis_point`; unbounded if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        half_length: Option<f64>,
    },
    Plane {
        point: Point3<f64>,
        normal: Vector3<f64>,
        /// Disc radius around `point`; unbounded if absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        extent: Option<f64>,
    },
}

impl Primitive {
    /// Smallest positive ray parameter of an intersection, `dir` unit.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let b = dir.dot(&oc);
                let c = oc.norm_squared() - radius * radius;
                smallest_root(1.0, 2.0 * b, c)
            }
            Primitive::Cylinder {
                axis_point,
                axis_dir,
                radius,
                half_length,
            } => {
                let a = axis_dir.normalize();
                let w = origin - axis_point;
                let dp = dir - a * dir.dot(&a);
                let wp = w - a * w.dot(&a);
                let qa = dp.norm_squared();
                if qa < 1e-15 {
                    return None;
                }
                let roots = roots(qa, 2.0 * dp.dot(&wp), wp.norm_squared() - radius * radius)?;
                roots.into_iter().filter(|&t| t > HIT_EPSILON).find(|&t| {
                    let h = (origin + dir * t - axis_point).dot(&a);
                    half_length.is_none_or(|hl| h.abs() <= hl)
                })
            }
            Primitive::Plane { point, normal, extent } => {
                let n = normal.normalize();
                let denom = dir.dot(&n);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (point - origin).dot(&n) / denom;
                if t <= HIT_EPSILON {
                    return None;
                }
                let hit = origin + dir * t;
                extent.is_none_or(|e| (hit - point).norm() <= e).then_some(t)
            }
        }
    }

    /// Unsigned distance from `p` to the primitive's surface (unbounded
    /// version of the surface).
    pub fn surface_distance(&self, p: &Point3<f64>) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Primitive::Cylinder {
                axis_point,
                axis_dir,
                radius,
                ..
            } => crate::featurefit::cylinder_residual(&axis_point, &axis_dir.normalize(), radius, p),
            Primitive::Plane { point, normal, .. } => (p - point).dot(&normal.normalize()).abs(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Primitive::Sphere { radius, .. } => *radius > 0.0,
            Primitive::Cylinder {
                axis_dir,
                radius,
                half_length,
                ..
            } => *radius > 0.0 && axis_dir.norm() > 0.0 && half_length.is_none_or(|h| h > 0.0),
            Primitive::Plane { normal, extent, .. } => normal.norm() > 0.0 && extent.is_none_or(|e| e > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(SceneError::Invalid(format!("degenerate primitive {self:?}")))
        }
    }
}

fn roots(a: f64, b: f64, c: f64) -> Option<[f64; 2]> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // Numerically stable pairing.
    let q = -0.5 * (b + b.signum() * s);
    let (t1, t2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some(if t1 <= t2 { [t1, t2] } else { [t2, t1] })
}

fn smallest_root(a: f64, b: f64, c: f64) -> Option<f64> {
    roots(a, b, c)?.into_iter().find(|&t| t > HIT_EPSILON)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub sensor_origin: Point3<f64>,
    /// Point the optical axis passes through.
    pub look_at: Point3<f64>,
    /// Full horizontal and vertical field of view, radians.
    #[serde(default = "default_fov")]
    pub fov: [f64; 2],
    /// Number of rays cast (rounded to a grid).
    pub samples: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub outlier_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_box: Option<Aabb>,
    #[serde(default)]
    pub seed: u64,
}

fn default_fov() -> [f64; 2] {
    [87f64.to_radians(), 58f64.to_radians()]
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SceneError::Invalid(m.to_string()));
        if self.primitives.is_empty() {
            return bad("scene has no primitives");
        }
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must lie in [0, 1)");
        }
        if self.outlier_fraction > 0.0 && self.outlier_box.is_none() {
            return bad("outliers requested without an outlier_box");
        }
        if !self.fov.iter().all(|&f| f > 0.0 && f < std::f64::consts::PI) {
            return bad("field of view angles must lie in (0, pi)");
        }
        if (self.look_at - self.sensor_origin).norm() < 1e-12 {
            return bad("look_at coincides with sensor_origin");
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// Unit ray directions in row-major grid order.
    pub fn ray_directions(&self) -> Vec<Vector3<f64>> {
        let [fh, fv] = self.fov;
        let cols = ((self.samples as f64 * fh / fv).sqrt().round() as usize).max(1);
        let rows = ((self.samples as f64 / cols as f64).round() as usize).max(1);
        let forward = (self.look_at - self.sensor_origin).normalize();
        let helper = if forward.z.abs() < 0.99 { Vector3::z() } else { Vector3::x() };
        let right = forward.cross(&helper).normalize();
        let up = right.cross(&forward);
        let mut dirs = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let pitch = fv / 2.0 - (r as f64 + 0.5) * fv / rows as f64;
            for c in 0..cols {
                let yaw = -fh / 2.0 + (c as f64 + 0.5) * fh / cols as f64;
                let d = (forward * yaw.cos() + right * yaw.sin()) * pitch.cos() + up * pitch.sin();
                dirs.push(d.normalize());
            }
        }
        dirs
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_scene(&text)
}

pub fn parse_scene(text: &str) -> Result<SceneSpec> {
    let spec: SceneSpec = toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointLabel {
    Primitive(usize),
    Outlier,
}

#[derive(Debug, Clone)]
pub struct Scan {
    pub cloud: PointCloud,
    pub labels: Vec<PointLabel>,
}

fn in_range(origin: &Point3<f64>, p: &Point3<f64>) -> bool {
    let d = (p - origin).norm();
    d >= SENSOR_RANGE[0] && d <= SENSOR_RANGE[1]
}

pub fn generate_scan(spec: &SceneSpec) -> Result<Scan> {
    spec.validate()?;
    let origin = spec.sensor_origin;
    let mut noise_rng = rng::stream(spec.seed, 0);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| SceneError::Invalid(e.to_string()))?;

    let mut points = Vec::new();
    let mut labels = Vec::new();
    for dir in spec.ray_directions() {
        let hit = spec
            .primitives
            .iter()
            .enumerate()
            .filter_map(|(i, prim)| prim.intersect(&origin, &dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let Some((t, label)) = hit else {
            continue;
        };
        let range = if spec.noise_sigma > 0.0 { t + noise.sample(&mut noise_rng) } else { t };
        if range < SENSOR_RANGE[0] || range > SENSOR_RANGE[1] {
            continue;
        }
        points.push(origin + dir * range);
        labels.push(PointLabel::Primitive(label));
    }
    if points.is_empty() {
        return Err(SceneError::EmptyScan);
    }

    if spec.outlier_fraction > 0.0 {
        let bbox = spec.outlier_box.expect("validated");
        let mut out_rng = rng::stream(spec.seed, 1);
        let n_out = (spec.outlier_fraction * points.len() as f64).round() as usize;
        let mut chosen = index::sample(&mut out_rng, points.len(), n_out).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            for _ in 0..MAX_OUTLIER_TRIES {
                let p = Point3::new(
                    out_rng.random_range(bbox.min.x..=bbox.max.x),
                    out_rng.random_range(bbox.min.y..=bbox.max.y),
                    out_rng.random_range(bbox.min.z..=bbox.max.z),
                );
                if in_range(&origin, &p) {
                    points[i] = p;
                    labels[i] = PointLabel::Outlier;
                    break;
                }
            }
        }
    }

    let cloud = PointCloud::new(points, "world").map_err(|e| SceneError::Invalid(e.to_string()))?;
    Ok(Scan { cloud, labels })
}
