//! Microspine grasp mechanics.
//!
//! A grasp is a set of fingers, each carrying a row of spines. The closing
//! tendon drives the fingers through a balanced whiffletree, so an external
//! pull is shared equally by the fingers that hold, and equally by the
//! surviving spines within a finger. Individual asperities are unknowable,
//! so each spine's engagement and strength are random draws.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Exp, Weibull};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurefit::Feature;

#[derive(Debug, Error)]
pub enum GripperError {
    #[error("{0}")]
    Domain(String),
    #[error("feature not graspable: {0}")]
    NotGraspable(String),
}

pub type Result<T> = std::result::Result<T, GripperError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsperityFamily {
    Weibull,
    Exponential,
    Deterministic,
}

/// Probability that a spine finds an asperity, as a function of the load
/// angle θ between the pull line and the local tangent plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EngageCurve {
    Constant { probability: f64 },
    /// `p_max` up to `theta_full`, falling linearly to zero at `theta_zero`.
    Linear {
        p_max: f64,
        theta_full: f64,
        theta_zero: f64,
    },
}

impl EngageCurve {
    pub fn probability(&self, theta: f64) -> f64 {
        match *self {
            EngageCurve::Constant { probability } => probability,
            EngageCurve::Linear {
                p_max,
                theta_full,
                theta_zero,
            } => {
                if theta <= theta_full {
                    p_max
                } else if theta >= theta_zero {
                    0.0
                } else {
                    p_max * (theta_zero - theta) / (theta_zero - theta_full)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            EngageCurve::Constant { probability } => (0.0..=1.0).contains(&probability),
            EngageCurve::Linear {
                p_max,
                theta_full,
                theta_zero,
            } => (0.0..=1.0).contains(&p_max) && theta_full >= 0.0 && theta_full < theta_zero,
        };
        if ok {
            Ok(())
        } else {
            Err(GripperError::Domain(format!("invalid engagement curve {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsperityModel {
    pub family: AsperityFamily,
    /// Newtons. For `deterministic` this is the limit force itself.
    pub scale: f64,
    /// Weibull shape parameter; ignored by the other families.
    pub shape: f64,
    pub engage: EngageCurve,
}

/// Weibull scale that puts the default gripper's 5th-percentile pull-off
/// force on a 0.1 m hemisphere at 34.2 N, for the default sample count and
/// seed. Rounded up from the bisection result of
/// [`crate::montecarlo::calibrate_scale`].
pub const DEFAULT_WEIBULL_SCALE: f64 = 11.74;

impl Default for AsperityModel {
    fn default() -> Self {
        Self {
            family: AsperityFamily::Weibull,
            scale: DEFAULT_WEIBULL_SCALE,
            shape: 2.0,
            engage: EngageCurve::Linear {
                p_max: 0.95,
                theta_full: 20f64.to_radians(),
                theta_zero: 70f64.to_radians(),
            },
        }
    }
}

impl AsperityModel {
    pub fn engage_probability(&self, theta: f64) -> f64 {
        self.engage.probability(theta)
    }

    pub fn sample_limit<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            AsperityFamily::Deterministic => self.scale,
            AsperityFamily::Exponential => Exp::new(1.0 / self.scale)
                .expect("validated scale")
                .sample(rng),
            AsperityFamily::Weibull => Weibull::new(self.scale, self.shape)
                .expect("validated scale and shape")
                .sample(rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(GripperError::Domain(format!("asperity scale must be positive, got {}", self.scale)));
        }
        if self.family == AsperityFamily::Weibull && !(self.shape > 0.0 && self.shape.is_finite()) {
            return Err(GripperError::Domain(format!("Weibull shape must be positive, got {}", self.shape)));
        }
        self.engage.validate()
    }
}

/// Where a finger's spine row starts, in the gripper frame.
///
/// The gripper frame has +z along the pull direction (out of the feature,
/// toward the boom). `direction` is the outward surface normal at the
/// finger's reference contact; the spine row starts `contact_offset` meters
/// further along the surface, away from the pull axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerPlacement {
    pub direction: Vector3<f64>,
    pub contact_offset: f64,
}

impl FingerPlacement {
    /// Finger at azimuth `azimuth` around the pull axis, wrapped `polar`
    /// radians away from it.
    pub fn at(azimuth: f64, polar: f64, contact_offset: f64) -> Self {
        Self {
            direction: Vector3::new(polar.sin() * azimuth.cos(), polar.sin() * azimuth.sin(), polar.cos()),
            contact_offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// Peak force sustained until some finger has lost every spine.
    #[default]
    Cascade,
    /// Force at the first spine detachment.
    FirstDetachment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperConfig {
    pub n_fingers: usize,
    pub spines_per_finger: usize,
    pub fingers: Vec<FingerPlacement>,
    /// Arc length between neighboring spines of a finger, meters.
    pub spine_pitch: f64,
    pub tendon_force_max: f64,
    /// Feature radii the fingers can wrap, meters.
    pub graspable_radius: [f64; 2],
    pub failure_mode: FailureMode,
    pub asperity: AsperityModel,
}

impl Default for GripperConfig {
    fn default() -> Self {
        let polar = 80f64.to_radians();
        Self {
            n_fingers: 3,
            spines_per_finger: 4,
            fingers: (0..3)
                .map(|i| FingerPlacement::at(i as f64 * 2.0 * std::f64::consts::PI / 3.0, polar, 0.0))
                .collect(),
            spine_pitch: 0.01,
            tendon_force_max: 30.0,
            graspable_radius: [0.03, 0.3],
            failure_mode: FailureMode::Cascade,
            asperity: AsperityModel::default(),
        }
    }
}

impl GripperConfig {
    /// Check the invariants. One finger is allowed so single-spine
    /// scenarios can be expressed.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GripperError::Domain(m));
        if self.n_fingers < 1 {
            return bad("at least one finger is required".into());
        }
        if self.spines_per_finger < 1 {
            return bad("spines_per_finger must be at least 1".into());
        }
        if self.fingers.len() != self.n_fingers {
            return bad(format!("{} finger placements for {} fingers", self.fingers.len(), self.n_fingers));
        }
        if let Some(f) = self.fingers.iter().find(|f| !(f.direction.norm() > 0.0) || !f.contact_offset.is_finite()) {
            return bad(format!("invalid finger placement {f:?}"));
        }
        if !(self.tendon_force_max > 0.0 && self.tendon_force_max.is_finite()) {
            return bad(format!("tendon_force_max must be positive, got {}", self.tendon_force_max));
        }
        if !(self.spine_pitch >= 0.0) {
            return bad(format!("spine_pitch must be non-negative, got {}", self.spine_pitch));
        }
        let [lo, hi] = self.graspable_radius;
        if !(lo >= 0.0 && lo < hi) {
            return bad(format!("graspable_radius must satisfy 0 <= min < max, got {lo}..{hi}"));
        }
        self.asperity.validate()
    }

    pub fn total_spines(&self) -> usize {
        self.n_fingers * self.spines_per_finger
    }
}

/// Geometric descriptor of the surface being grasped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureShape {
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
    Cylinder {
        axis_point: Point3<f64>,
        axis_dir: Vector3<f64>,
        radius: f64,
    },
}

impl FeatureShape {
    pub fn radius(&self) -> f64 {
        match *self {
            FeatureShape::Sphere { radius, .. } | FeatureShape::Cylinder { radius, .. } => radius,
        }
    }
}

impl From<&Feature> for FeatureShape {
    fn from(f: &Feature) -> Self {
        match f {
            Feature::Sphere(s) => FeatureShape::Sphere {
                center: s.center,
                radius: s.radius,
            },
            Feature::Cylinder(c) => FeatureShape::Cylinder {
                axis_point: c.axis_point,
                axis_dir: c.axis_dir,
                radius: c.radius,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineContact {
    pub finger: usize,
    pub engaged: bool,
    /// Newtons, along the spine's load line. Zero when not engaged.
    pub limit_force: f64,
    pub contact_point: Point3<f64>,
    pub contact_normal: Vector3<f64>,
    /// Angle between the pull line and the tangent plane, radians.
    pub load_angle: f64,
    /// Fraction of the spine's limit that acts against the pull, `cos θ`.
    pub pull_projection: f64,
}

impl SpineContact {
    /// Limit force resolved along the pull direction.
    pub fn effective_limit(&self) -> f64 {
        if self.engaged {
            self.limit_force * self.pull_projection
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspRealization {
    pub n_fingers: usize,
    pub spines: Vec<SpineContact>,
    pub feature: FeatureShape,
    pub pull_direction: Vector3<f64>,
    pub failure_mode: FailureMode,
}

impl GraspRealization {
    pub fn engaged_count(&self) -> usize {
        self.spines.iter().filter(|s| s.engaged).count()
    }

    /// Fingers with at least one engaged spine.
    pub fn active_fingers(&self) -> Vec<bool> {
        let mut active = vec![false; self.n_fingers];
        for s in self.spines.iter().filter(|s| s.engaged) {
            active[s.finger] = true;
        }
        active
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiffletreeState {
    pub tendon_force: f64,
    pub active: Vec<bool>,
    /// Newtons per finger; inactive fingers carry zero.
    pub finger_shares: Vec<f64>,
    /// Newtons per spine, grouped by finger.
    pub spine_preloads: Vec<Vec<f64>>,
}

/// Split `total` equally over `slots` flagged entries so that the left-fold
/// sum of the result equals `total` exactly.
///
/// Every active slot but the last gets `total / n`; the last gets the
/// remainder. The prefix sum lies in `[total / 2, total]`, so the
/// subtraction is exact (Sterbenz) and adding it back reproduces `total`.
fn balanced_split(total: f64, active: &[bool]) -> Vec<f64> {
    let n = active.iter().filter(|&&a| a).count();
    let mut out = vec![0.0; active.len()];
    if n == 0 {
        return out;
    }
    let share = total / n as f64;
    let last = active.iter().rposition(|&a| a).expect("n > 0");
    let mut prefix = 0.0;
    for (i, &a) in active.iter().enumerate() {
        if !a {
            continue;
        }
        if i == last {
            out[i] = total - prefix;
        } else {
            out[i] = share;
            prefix += share;
        }
    }
    out
}

/// Distribute `tendon_force` over the active fingers and their spines.
pub fn whiffletree_share(cfg: &GripperConfig, tendon_force: f64, active_fingers: &[bool]) -> Result<WhiffletreeState> {
    if active_fingers.len() != cfg.n_fingers {
        return Err(GripperError::Domain(format!(
            "active mask has {} entries for {} fingers",
            active_fingers.len(),
            cfg.n_fingers
        )));
    }
    if !(0.0..=cfg.tendon_force_max).contains(&tendon_force) {
        return Err(GripperError::Domain(format!(
            "tendon force {tendon_force} outside [0, {}]",
            cfg.tendon_force_max
        )));
    }
    if !active_fingers.iter().any(|&a| a) {
        return Err(GripperError::Domain("no active finger".into()));
    }
    let finger_shares = balanced_split(tendon_force, active_fingers);
    let all_spines = vec![true; cfg.spines_per_finger];
    let spine_preloads = finger_shares
        .iter()
        .map(|&share| balanced_split(share, &all_spines))
        .collect();
    Ok(WhiffletreeState {
        tendon_force,
        active: active_fingers.to_vec(),
        finger_shares,
        spine_preloads,
    })
}

/// Rotate the unit normal `n` by `angle` away from `pull`, keeping it on
/// the feature surface.
fn advance_along_surface(shape: &FeatureShape, n: &Vector3<f64>, pull: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    if angle == 0.0 {
        return *n;
    }
    let axis = match *shape {
        FeatureShape::Sphere { .. } => {
            let a = pull.cross(n);
            if a.norm() < 1e-12 {
                // At the pole every meridian works; pick a fixed one.
                let helper = if pull.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
                pull.cross(&helper)
            } else {
                a
            }
        }
        FeatureShape::Cylinder { axis_dir, .. } => {
            // Of the two senses of rotation about the axis, take the one
            // moving away from the pull.
            let plus = Rotation3::from_axis_angle(&Unit::new_normalize(axis_dir), angle) * n;
            let minus = Rotation3::from_axis_angle(&Unit::new_normalize(axis_dir), -angle) * n;
            return if minus.dot(pull) < plus.dot(pull) { minus } else { plus };
        }
    };
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle) * n
}

fn gripper_frame(pull: &Vector3<f64>) -> [Vector3<f64>; 3] {
    let z = *pull;
    let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let y = z.cross(&helper).normalize();
    let x = y.cross(&z);
    [x, y, z]
}

/// Draw one grasp: place the spines on the feature, then draw each spine's
/// engagement and limit force from `rng`.
pub fn sample_realization<R: Rng + ?Sized>(
    cfg: &GripperConfig,
    feature: &FeatureShape,
    pull_direction: &Vector3<f64>,
    rng: &mut R,
) -> Result<GraspRealization> {
    let radius = feature.radius();
    let [lo, hi] = cfg.graspable_radius;
    if !(radius >= lo && radius <= hi) {
        return Err(GripperError::NotGraspable(format!(
            "feature radius {radius:.4} m outside graspable span [{lo}, {hi}] m"
        )));
    }
    let pull_norm = pull_direction.norm();
    if (pull_norm - 1.0).abs() > 1e-9 {
        return Err(GripperError::Domain(format!("pull direction is not unit (norm {pull_norm})")));
    }
    let pull = *pull_direction;
    let [gx, gy, gz] = gripper_frame(&pull);

    let mut spines = Vec::with_capacity(cfg.total_spines());
    for (finger, placement) in cfg.fingers.iter().enumerate() {
        let d = placement.direction.normalize();
        let world = gx * d.x + gy * d.y + gz * d.z;
        let base_normal = match *feature {
            FeatureShape::Sphere { .. } => world,
            FeatureShape::Cylinder { axis_dir, .. } => {
                let a = axis_dir.normalize();
                let radial = world - a * world.dot(&a);
                if radial.norm() < 1e-9 {
                    return Err(GripperError::NotGraspable(format!(
                        "finger {finger} points along the cylinder axis"
                    )));
                }
                radial.normalize()
            }
        };
        for j in 0..cfg.spines_per_finger {
            let arc = placement.contact_offset + j as f64 * cfg.spine_pitch;
            let normal = advance_along_surface(feature, &base_normal, &pull, arc / radius);
            let contact_point = match *feature {
                FeatureShape::Sphere { center, .. } => center + normal * radius,
                FeatureShape::Cylinder { axis_point, .. } => axis_point + normal * radius,
            };
            let normal_component = pull.dot(&normal).clamp(-1.0, 1.0);
            let tangential = (pull - normal * pull.dot(&normal)).norm().min(1.0);
            let load_angle = normal_component.abs().asin().clamp(0.0, FRAC_PI_2);
            let p_engage = cfg.asperity.engage_probability(load_angle);
            let engaged = rng.random::<f64>() < p_engage;
            let limit_force = if engaged { cfg.asperity.sample_limit(rng) } else { 0.0 };
            spines.push(SpineContact {
                finger,
                engaged,
                limit_force,
                contact_point,
                contact_normal: normal,
                load_angle,
                pull_projection: tangential,
            });
        }
    }
    Ok(GraspRealization {
        n_fingers: cfg.n_fingers,
        spines,
        feature: *feature,
        pull_direction: pull,
        failure_mode: cfg.failure_mode,
    })
}

/// Pull magnitude each finger can sustain as a multiple of its load
/// fraction, i.e. the external force at which that finger gives out.
///
/// Within a finger the surviving spines share its load equally; with
/// effective limits sorted ascending `e₁ ≤ … ≤ e_m`, the finger holds up to
/// `max_k e_k (m − k + 1)` (cascade) or `m e₁` (first detachment).
fn finger_capacity(limits: &mut [f64], mode: FailureMode) -> f64 {
    limits.sort_by(f64::total_cmp);
    let m = limits.len();
    match mode {
        FailureMode::FirstDetachment => limits[0] * m as f64,
        FailureMode::Cascade => limits
            .iter()
            .enumerate()
            .map(|(k, &e)| e * (m - k) as f64)
            .fold(0.0, f64::max),
    }
}

/// External pull along the pull direction at which the grasp fails.
///
/// The pull reaches finger `i` in proportion to its whiffletree share. A
/// finger fails once its load exceeds what its spines can hold, with load
/// redistributing over survivors as spines detach; the grasp fails with
/// its first finger. Fingers carrying load without any engaged spine make
/// the grasp worthless (0 N).
pub fn pull_force_at_failure(realization: &GraspRealization, whiffle: &WhiffletreeState) -> f64 {
    let n_active = whiffle.active.iter().filter(|&&a| a).count();
    if n_active == 0 || realization.engaged_count() == 0 {
        return 0.0;
    }
    let mut per_finger: Vec<Vec<f64>> = vec![Vec::new(); realization.n_fingers];
    for s in realization.spines.iter().filter(|s| s.engaged) {
        per_finger[s.finger].push(s.effective_limit());
    }
    let mut peak = f64::INFINITY;
    for (i, limits) in per_finger.iter_mut().enumerate() {
        if !whiffle.active.get(i).copied().unwrap_or(false) {
            continue;
        }
        if limits.is_empty() {
            return 0.0;
        }
        let capacity = finger_capacity(limits, realization.failure_mode);
        peak = peak.min(capacity * load_ratio(whiffle, i, n_active));
    }
    if peak.is_finite() {
        peak
    } else {
        0.0
    }
}

/// External force per unit of finger load, `tendon / share_i`.
pub(crate) fn load_ratio(whiffle: &WhiffletreeState, finger: usize, n_active: usize) -> f64 {
    let share = whiffle.finger_shares[finger];
    if whiffle.tendon_force > 0.0 && share > 0.0 {
        whiffle.tendon_force / share
    } else {
        n_active as f64
    }
}
