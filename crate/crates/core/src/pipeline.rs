//! Two-stage grasp-site selection.
//!
//! 1. **Far scan**: with the boom stowed, fit spheres to the whole scan and
//!    rank them, nearer features first among equally good fits.
//! 2. **Near scan**: for each candidate, take a closer rescan (or a crop of
//!    the far scan), locate the apex, and check reachability and the local
//!    surface normal against the loading direction.
//! 3. **Scoring**: estimate the pull-off force distribution along the boom
//!    and commit when its 5th percentile clears the configured floor.

use std::path::PathBuf;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boom::{self, BoomError, BoomPose};
use crate::config::{ConfigError, PipelineConfig};
use crate::featurefit::{self, Feature, FitError, MsacConfig, SphereFit};
use crate::gripper::{FeatureShape, GripperError};
use crate::montecarlo::{self, PullForceDistribution};
use crate::pointcloud::{self, ply, PointCloud, PointCloudError};
use crate::report::{RunReport, Summary, SCHEMA_VERSION};
use crate::rng;

/// Normalized scores (m² per inlier) are compared in steps of this size;
/// fits within one step rank by distance instead.
pub const SCORE_QUANTUM: f64 = 1e-9;

const FAR_SEED_SALT: u64 = 0xFA5;
const SCORE_SEED_SALT: u64 = 0x5C0E;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Input(#[from] PointCloudError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Gripper(#[from] GripperError),
    #[error("{0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    DegenerateGeometry,
    Unreachable,
    NormalOutOfRange,
    NotGraspable,
    InsufficientForce,
}

impl AbortReason {
    pub fn code(&self) -> &'static str {
        match self {
            AbortReason::DegenerateGeometry => "degenerate_geometry",
            AbortReason::Unreachable => "unreachable",
            AbortReason::NormalOutOfRange => "normal_out_of_range",
            AbortReason::NotGraspable => "not_graspable",
            AbortReason::InsufficientForce => "insufficient_force",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Decision {
    Committed,
    Aborted { reason: AbortReason, detail: String },
}

impl Decision {
    pub fn is_committed(&self) -> bool {
        matches!(self, Decision::Committed)
    }

    pub fn reason(&self) -> Option<AbortReason> {
        match self {
            Decision::Committed => None,
            Decision::Aborted { reason, .. } => Some(*reason),
        }
    }
}

/// One candidate and everything the pipeline learned about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspSite {
    pub rank: usize,
    pub feature: Feature,
    /// Measured near-scan point closest to the feature apex.
    pub position: Option<Point3<f64>>,
    pub surface_normal: Option<Vector3<f64>>,
    pub boom_pose: Option<BoomPose>,
    pub pull_direction: Option<Vector3<f64>>,
    /// Angle between the surface normal and the loading direction, radians.
    pub normal_angle: Option<f64>,
    pub pull_distribution: Option<PullForceDistribution>,
    pub decision: Decision,
}

/// A close-range rescan and where it was taken from.
#[derive(Debug, Clone)]
pub struct NearScan {
    pub cloud: PointCloud,
    pub sensor_origin: Point3<f64>,
}

/// Supplies the close-range rescan for a ranked candidate. `Ok(None)` falls
/// back to cropping the far scan.
pub trait NearCloudProvider {
    fn near_scan(&self, rank: usize, candidate: &SphereFit) -> Result<Option<NearScan>>;
}

impl<F> NearCloudProvider for F
where
    F: Fn(usize, &SphereFit) -> Result<Option<NearScan>>,
{
    fn near_scan(&self, rank: usize, candidate: &SphereFit) -> Result<Option<NearScan>> {
        self(rank, candidate)
    }
}

/// No rescans; every candidate uses the far-scan crop.
pub struct CropOnly;

impl NearCloudProvider for CropOnly {
    fn near_scan(&self, _rank: usize, _candidate: &SphereFit) -> Result<Option<NearScan>> {
        Ok(None)
    }
}

/// Rescans stored as `near_<rank>.ply` in a directory. A
/// `comment sensor_origin x y z` header line sets the scan origin;
/// otherwise the boom base is assumed.
pub struct DirectoryProvider {
    pub dir: PathBuf,
    pub default_origin: Point3<f64>,
}

impl NearCloudProvider for DirectoryProvider {
    fn near_scan(&self, rank: usize, _candidate: &SphereFit) -> Result<Option<NearScan>> {
        let path = self.dir.join(format!("near_{rank}.ply"));
        if !path.exists() {
            return Ok(None);
        }
        let parsed = ply::read_ply_file(&path)?;
        let origin = parsed
            .comments
            .iter()
            .find_map(|c| parse_origin_comment(c))
            .unwrap_or(self.default_origin);
        Ok(Some(NearScan {
            cloud: parsed.cloud,
            sensor_origin: origin,
        }))
    }
}

pub fn sensor_origin_comment(origin: &Point3<f64>) -> String {
    format!("sensor_origin {} {} {}", origin.x, origin.y, origin.z)
}

fn parse_origin_comment(comment: &str) -> Option<Point3<f64>> {
    let rest = comment.strip_prefix("sensor_origin ")?;
    let v: Vec<f64> = rest.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().ok()?;
    (v.len() == 3).then(|| Point3::new(v[0], v[1], v[2]))
}

/// Ranking key: quantized score per inlier, then distance from the boom
/// base, then extraction order.
fn rank_key(fit: &SphereFit, base: &Point3<f64>, order: usize) -> (i64, f64, usize) {
    let quantized = (fit.normalized_score() / SCORE_QUANTUM).round() as i64;
    (quantized, (fit.center - base).norm(), order)
}

/// Order candidates by [`rank_key`].
pub fn rank_candidates(fits: Vec<SphereFit>, base: &Point3<f64>) -> Vec<SphereFit> {
    let mut keyed: Vec<((i64, f64, usize), SphereFit)> = fits
        .into_iter()
        .enumerate()
        .map(|(i, f)| (rank_key(&f, base, i), f))
        .collect();
    keyed.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)).then(a.0 .2.cmp(&b.0 .2)));
    keyed.into_iter().map(|(_, f)| f).collect()
}

/// Keep only returns inside the stowed camera's working range.
pub fn range_gate(cloud: &PointCloud, origin: &Point3<f64>, range: [f64; 2]) -> PointCloud {
    let kept: Vec<usize> = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let d = (*p - origin).norm();
            d >= range[0] && d <= range[1]
        })
        .map(|(i, _)| i)
        .collect();
    cloud.select(&kept)
}

/// The cloud the far-scan fits are expressed in: range gated, then voxel
/// downsampled.
pub fn far_scan_cloud(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<PointCloud> {
    let gated = range_gate(cloud, &cfg.boom.base_position, cfg.boom.stowed_camera_range);
    if cfg.voxel_size > 0.0 && !gated.is_empty() {
        Ok(pointcloud::voxel_downsample(&gated, cfg.voxel_size)?)
    } else {
        Ok(gated)
    }
}

/// Candidate spheres from the stowed-boom scan, best first. Inlier indices
/// refer to [`far_scan_cloud`].
pub fn far_scan(cloud: &PointCloud, cfg: &PipelineConfig) -> Result<Vec<SphereFit>> {
    let processed = far_scan_cloud(cloud, cfg)?;
    if processed.len() < 4 {
        return Ok(Vec::new());
    }
    let msac = MsacConfig {
        seed: rng::mix(cfg.seed, FAR_SEED_SALT),
        ..cfg.msac.clone()
    };
    let fits = featurefit::find_spherical_regions(&processed, &msac, cfg.max_features)?;
    Ok(rank_candidates(fits, &cfg.boom.base_position))
}

/// Outcome of the near-scan check.
#[derive(Debug, Clone, PartialEq)]
pub enum NearVerdict {
    Committed {
        position: Point3<f64>,
        normal: Vector3<f64>,
        pose: BoomPose,
        pull_direction: Vector3<f64>,
        normal_angle: f64,
    },
    Aborted {
        reason: AbortReason,
        detail: String,
        position: Option<Point3<f64>>,
        normal: Option<Vector3<f64>>,
        pose: Option<BoomPose>,
        normal_angle: Option<f64>,
    },
}

impl NearVerdict {
    fn abort(reason: AbortReason, detail: impl Into<String>) -> Self {
        NearVerdict::Aborted {
            reason,
            detail: detail.into(),
            position: None,
            normal: None,
            pose: None,
            normal_angle: None,
        }
    }
}

/// Grasp target on `candidate`: the surface point along the configured apex
/// direction, or else the point facing the boom base.
pub fn apex(candidate: &SphereFit, cfg: &PipelineConfig) -> Point3<f64> {
    let dir = match cfg.apex_direction {
        Some(d) => d.normalize(),
        None => {
            let to_base = cfg.boom.base_position - candidate.center;
            if to_base.norm() > 0.0 {
                to_base.normalize()
            } else {
                Vector3::z()
            }
        }
    };
    candidate.center + dir * candidate.radius
}

/// Angle between a surface normal and the loading direction.
pub fn normal_angle(normal: &Vector3<f64>, loading: &Vector3<f64>) -> f64 {
    normal.dot(loading).clamp(-1.0, 1.0).acos()
}

pub fn near_scan_verify(near: &NearScan, candidate: &SphereFit, cfg: &PipelineConfig) -> NearVerdict {
    let target = apex(candidate, cfg);
    if near.cloud.len() < cfg.normal_k {
        return NearVerdict::abort(
            AbortReason::DegenerateGeometry,
            format!("near scan has {} points, need {}", near.cloud.len(), cfg.normal_k),
        );
    }
    let (index, gap) = near.cloud.knn(&target, 1).expect("non-empty near scan")[0];
    if gap > candidate.radius {
        return NearVerdict::abort(
            AbortReason::DegenerateGeometry,
            format!("no surface within {:.3} m of the apex (nearest {gap:.3} m)", candidate.radius),
        );
    }
    let position = near.cloud.point(index);
    let pose = match boom::inverse_kinematics(&cfg.boom, &position) {
        Ok(pose) => pose,
        Err(e @ (BoomError::Unreachable { .. } | BoomError::Singularity(_))) => {
            return NearVerdict::Aborted {
                reason: AbortReason::Unreachable,
                detail: e.to_string(),
                position: Some(position),
                normal: None,
                pose: None,
                normal_angle: None,
            };
        }
        Err(e) => return NearVerdict::abort(AbortReason::Unreachable, e.to_string()),
    };
    let estimate = match pointcloud::estimate_normal(&near.cloud, index, cfg.normal_k, &near.sensor_origin) {
        Ok(n) => n,
        Err(e) => {
            return NearVerdict::Aborted {
                reason: AbortReason::DegenerateGeometry,
                detail: e.to_string(),
                position: Some(position),
                normal: None,
                pose: Some(pose),
                normal_angle: None,
            };
        }
    };
    let pull_direction = match boom::loading_direction(&cfg.boom, &pose) {
        Ok(d) => d,
        Err(e) => return NearVerdict::abort(AbortReason::Unreachable, e.to_string()),
    };
    let angle = normal_angle(&estimate.normal, &pull_direction);
    if angle > cfg.normal_cone_half_angle {
        return NearVerdict::Aborted {
            reason: AbortReason::NormalOutOfRange,
            detail: format!(
                "normal at {:.1} deg from the loading direction, cone {:.1} deg",
                angle.to_degrees(),
                cfg.normal_cone_half_angle.to_degrees()
            ),
            position: Some(position),
            normal: Some(estimate.normal),
            pose: Some(pose),
            normal_angle: Some(angle),
        };
    }
    NearVerdict::Committed {
        position,
        normal: estimate.normal,
        pose,
        pull_direction,
        normal_angle: angle,
    }
}

/// Attach the pull-off distribution to a site that passed the near scan
/// and make the final force decision.
pub fn score_site(
    rank: usize,
    candidate: &SphereFit,
    verdict: &NearVerdict,
    cfg: &PipelineConfig,
) -> Result<GraspSite> {
    let NearVerdict::Committed {
        position,
        normal,
        pose,
        pull_direction,
        normal_angle,
    } = verdict
    else {
        return Err(PipelineError::Internal("score_site called on an aborted candidate".into()));
    };
    let feature = Feature::Sphere(candidate.clone());
    let seed = rng::mix(cfg.seed, SCORE_SEED_SALT + rank as u64);
    let shape = FeatureShape::from(&feature);
    let mut site = GraspSite {
        rank,
        feature,
        position: Some(*position),
        surface_normal: Some(*normal),
        boom_pose: Some(*pose),
        pull_direction: Some(*pull_direction),
        normal_angle: Some(*normal_angle),
        pull_distribution: None,
        decision: Decision::Committed,
    };
    match montecarlo::estimate_pull_distribution(&cfg.gripper, &shape, pull_direction, cfg.mc_samples, seed) {
        Ok(dist) => {
            let p05 = dist.quantiles.q05;
            if p05 < cfg.min_p05_force {
                site.decision = Decision::Aborted {
                    reason: AbortReason::InsufficientForce,
                    detail: format!("p05 pull-off force {p05:.2} N below {:.2} N", cfg.min_p05_force),
                };
            }
            site.pull_distribution = Some(dist);
        }
        Err(GripperError::NotGraspable(msg)) => {
            site.decision = Decision::Aborted {
                reason: AbortReason::NotGraspable,
                detail: msg,
            };
        }
        Err(e) => return Err(e.into()),
    }
    Ok(site)
}

fn crop(far: &PointCloud, candidate: &SphereFit, cfg: &PipelineConfig) -> NearScan {
    let idx = far.within_radius(&candidate.center, cfg.crop_radius_factor * candidate.radius);
    NearScan {
        cloud: far.select(&idx),
        sensor_origin: cfg.boom.base_position,
    }
}

/// Full run: far scan, per-candidate near verification and scoring.
///
/// `generated_unix_s` is copied into the report; pass `None` for
/// byte-reproducible output.
pub fn run_pipeline(
    far_cloud: &PointCloud,
    provider: &dyn NearCloudProvider,
    cfg: &PipelineConfig,
    generated_unix_s: Option<u64>,
) -> Result<RunReport> {
    cfg.validate()?;
    let candidates = far_scan(far_cloud, cfg)?;
    let mut sites = Vec::with_capacity(candidates.len());
    for (rank, candidate) in candidates.iter().enumerate() {
        let near = match provider.near_scan(rank, candidate)? {
            Some(scan) => scan,
            None => crop(far_cloud, candidate, cfg),
        };
        let verdict = near_scan_verify(&near, candidate, cfg);
        let site = match &verdict {
            NearVerdict::Committed { .. } => score_site(rank, candidate, &verdict, cfg)?,
            NearVerdict::Aborted {
                reason,
                detail,
                position,
                normal,
                pose,
                normal_angle,
            } => GraspSite {
                rank,
                feature: Feature::Sphere(candidate.clone()),
                position: *position,
                surface_normal: *normal,
                boom_pose: *pose,
                pull_direction: None,
                normal_angle: *normal_angle,
                pull_distribution: None,
                decision: Decision::Aborted {
                    reason: *reason,
                    detail: detail.clone(),
                },
            },
        };
        sites.push(site);
    }
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        generated_unix_s,
        summary: Summary::of(&sites),
        config_echo: cfg.clone(),
        candidates: sites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(center: Point3<f64>, score: f64, inliers: usize) -> SphereFit {
        SphereFit {
            center,
            radius: 0.1,
            msac_score: score * inliers as f64,
            inlier_mse: score,
            inliers: (0..inliers).collect(),
            iterations_used: 1,
        }
    }

    #[test]
    fn ranking_prefers_score_then_distance_then_order() {
        let base = Point3::origin();
        let far_good = fit(Point3::new(3.0, 0.0, 0.0), 0.0, 100);
        let near_good = fit(Point3::new(1.0, 0.0, 0.0), 1e-14, 100);
        let near_bad = fit(Point3::new(0.5, 0.0, 0.0), 1e-3, 100);
        let ranked = rank_candidates(vec![near_bad.clone(), far_good.clone(), near_good.clone()], &base);
        assert_eq!(ranked, vec![near_good, far_good, near_bad]);
    }

    #[test]
    fn origin_comment_round_trips() {
        let o = Point3::new(0.25, -1.5, 2.0);
        assert_eq!(parse_origin_comment(&sensor_origin_comment(&o)), Some(o));
        assert_eq!(parse_origin_comment("sensor_origin 1 2"), None);
        assert_eq!(parse_origin_comment("frame_id world"), None);
    }

    #[test]
    fn empty_cloud_has_no_candidates() {
        let cfg = PipelineConfig::default();
        assert!(far_scan(&PointCloud::empty("world"), &cfg).unwrap().is_empty());
    }

    #[test]
    fn range_gate_drops_out_of_range() {
        let cloud = PointCloud::new(
            vec![Point3::new(0.3, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(7.0, 0.0, 0.0)],
            "world",
        )
        .unwrap();
        let gated = range_gate(&cloud, &Point3::origin(), [0.6, 6.0]);
        assert_eq!(gated.points(), &[Point3::new(1.0, 0.0, 0.0)]);
    }
}
