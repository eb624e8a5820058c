//! Monte Carlo estimation of pull-off force distributions.
//!
//! Sample `i` always draws from stream `i` of the seed, and moments are
//! accumulated over a fixed midpoint-split tree of sample indices. The
//! result therefore does not depend on the number of worker threads, and a
//! run over `[0, n)` equals the merge of runs over `[0, n/2)` and
//! `[n/2, n)` bit for bit.

use std::ops::Range;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gripper::{self, FeatureShape, GraspRealization, GripperConfig, GripperError};
use crate::rng;

pub const DEFAULT_SAMPLES: usize = 10_000;

/// Nearest-rank quantile levels, in percent.
pub const QUANTILE_PERCENTS: [u32; 5] = [5, 25, 50, 75, 95];

/// Leaves of the moment tree are accumulated sequentially.
const MOMENT_LEAF: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    #[serde(rename = "0.05")]
    pub q05: f64,
    #[serde(rename = "0.25")]
    pub q25: f64,
    #[serde(rename = "0.5")]
    pub q50: f64,
    #[serde(rename = "0.75")]
    pub q75: f64,
    #[serde(rename = "0.95")]
    pub q95: f64,
}

impl Quantiles {
    pub fn as_array(&self) -> [f64; 5] {
        [self.q05, self.q25, self.q50, self.q75, self.q95]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullForceDistribution {
    pub mean: f64,
    /// Unbiased sample variance, N²; 0 when only one sample was drawn.
    pub variance: f64,
    pub quantiles: Quantiles,
    pub n_samples: usize,
    pub seed: u64,
    /// Fraction of samples whose pull-off force is 0 N.
    pub failure_probability: f64,
    /// Set when `n_samples < 2` and the variance is not meaningful.
    pub low_sample_warning: bool,
    /// Digest of the (gripper, feature, pull direction) scenario.
    pub scenario: String,
}

impl PullForceDistribution {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance / self.n_samples as f64).sqrt()
    }
}

/// One Monte Carlo draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PullSample {
    pub index: u64,
    pub force: f64,
    pub engaged_spines: usize,
    /// Mean load angle of the engaged spines (all spines when none
    /// engaged), degrees.
    pub pull_angle_deg: f64,
}

/// Mergeable first and second moments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub min: f64,
    pub max: f64,
    pub zeros: u64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        if x == 0.0 {
            self.zeros += 1;
        }
    }

    /// Pairwise (Chan et al.) combination.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let (na, nb, nf) = (self.count as f64, other.count as f64, n as f64);
        let delta = other.mean - self.mean;
        Moments {
            count: n,
            mean: self.mean + delta * nb / nf,
            m2: self.m2 + other.m2 + delta * delta * na * nb / nf,
            min: self.min.min(other.min),
            max: self.max.max(other.max),
            zeros: self.zeros + other.zeros,
        }
    }

    /// Moments over `values` using the fixed midpoint-split tree.
    pub fn over(values: &[f64]) -> Moments {
        if values.len() <= MOMENT_LEAF {
            let mut m = Moments::default();
            for &v in values {
                m.push(v);
            }
            return m;
        }
        let (left, right) = values.split_at(values.len() / 2);
        let (a, b) = rayon::join(|| Moments::over(left), || Moments::over(right));
        a.merge(&b)
    }

    pub fn variance(&self) -> f64 {
        if self.count > 1 {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        } else {
            0.0
        }
    }
}

/// Stable digest identifying a scenario.
pub fn scenario_digest(cfg: &GripperConfig, feature: &FeatureShape, pull_direction: &Vector3<f64>) -> String {
    let payload = serde_json::to_vec(&(cfg, feature, pull_direction)).expect("scenario serializes");
    let digest = Sha256::digest(&payload);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn mean_load_angle(realization: &GraspRealization) -> f64 {
    let engaged: Vec<f64> = realization.spines.iter().filter(|s| s.engaged).map(|s| s.load_angle).collect();
    let angles = if engaged.is_empty() {
        realization.spines.iter().map(|s| s.load_angle).collect()
    } else {
        engaged
    };
    if angles.is_empty() {
        0.0
    } else {
        angles.iter().sum::<f64>() / angles.len() as f64
    }
}

/// Draw the samples with indices in `range`, ordered by index.
pub fn simulate(
    cfg: &GripperConfig,
    feature: &FeatureShape,
    pull_direction: &Vector3<f64>,
    range: Range<u64>,
    seed: u64,
) -> Result<Vec<PullSample>, GripperError> {
    cfg.validate()?;
    range
        .into_par_iter()
        .map(|index| {
            let mut stream = rng::stream(seed, index);
            let realization = gripper::sample_realization(cfg, feature, pull_direction, &mut stream)?;
            let active = realization.active_fingers();
            let force = if active.iter().any(|&a| a) {
                let whiffle = gripper::whiffletree_share(cfg, cfg.tendon_force_max, &active)?;
                gripper::pull_force_at_failure(&realization, &whiffle)
            } else {
                0.0
            };
            Ok(PullSample {
                index,
                force,
                engaged_spines: realization.engaged_count(),
                pull_angle_deg: mean_load_angle(&realization).to_degrees(),
            })
        })
        .collect()
}

/// Moments over the samples in `range`; merge two adjacent halves to get
/// the moments of the whole.
pub fn moments_for_range(
    cfg: &GripperConfig,
    feature: &FeatureShape,
    pull_direction: &Vector3<f64>,
    range: Range<u64>,
    seed: u64,
) -> Result<Moments, GripperError> {
    let forces: Vec<f64> = simulate(cfg, feature, pull_direction, range, seed)?
        .into_iter()
        .map(|s| s.force)
        .collect();
    Ok(Moments::over(&forces))
}

fn nearest_rank(sorted: &[f64], percent: u32) -> f64 {
    let n = sorted.len();
    let rank = (percent as usize * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Summarize already-drawn samples.
pub fn summarize(samples: &[PullSample], seed: u64, scenario: String) -> PullForceDistribution {
    let forces: Vec<f64> = samples.iter().map(|s| s.force).collect();
    let moments = Moments::over(&forces);
    let mut sorted = forces;
    sorted.sort_by(f64::total_cmp);
    let q = QUANTILE_PERCENTS.map(|p| nearest_rank(&sorted, p));
    PullForceDistribution {
        mean: moments.mean,
        variance: moments.variance(),
        quantiles: Quantiles {
            q05: q[0],
            q25: q[1],
            q50: q[2],
            q75: q[3],
            q95: q[4],
        },
        n_samples: samples.len(),
        seed,
        failure_probability: moments.zeros as f64 / samples.len() as f64,
        low_sample_warning: samples.len() < 2,
        scenario,
    }
}

pub fn estimate_pull_distribution(
    cfg: &GripperConfig,
    feature: &FeatureShape,
    pull_direction: &Vector3<f64>,
    n: usize,
    seed: u64,
) -> Result<PullForceDistribution, GripperError> {
    if n == 0 {
        return Err(GripperError::Domain("Monte Carlo needs at least one sample".into()));
    }
    let samples = simulate(cfg, feature, pull_direction, 0..n as u64, seed)?;
    Ok(summarize(&samples, seed, scenario_digest(cfg, feature, pull_direction)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub sample_counts: Vec<usize>,
    pub standard_errors: Vec<f64>,
    /// `SE(n) / SE(4n)` per step; `None` when both errors are zero.
    pub ratios: Vec<Option<f64>>,
    pub passed: bool,
}

pub const CONVERGENCE_RATIO_RANGE: (f64, f64) = (1.5, 2.5);

/// Check the 1/√n shrinkage of the standard error across runs at
/// `n, 4n, 16n, …` of one scenario and seed.
pub fn convergence_check(results: &[PullForceDistribution]) -> Result<ConvergenceReport, GripperError> {
    if results.len() < 2 {
        return Err(GripperError::Domain("convergence check needs at least two runs".into()));
    }
    let first = &results[0];
    for r in &results[1..] {
        if r.scenario != first.scenario || r.seed != first.seed {
            return Err(GripperError::Domain(format!(
                "mismatched scenarios: {}/{} vs {}/{}",
                first.scenario, first.seed, r.scenario, r.seed
            )));
        }
    }
    for w in results.windows(2) {
        if w[1].n_samples != 4 * w[0].n_samples {
            return Err(GripperError::Domain(format!(
                "sample counts must grow by 4x, got {} then {}",
                w[0].n_samples, w[1].n_samples
            )));
        }
    }
    let standard_errors: Vec<f64> = results.iter().map(|r| r.standard_error()).collect();
    let ratios: Vec<Option<f64>> = standard_errors
        .windows(2)
        .map(|w| {
            if w[0] == 0.0 && w[1] == 0.0 {
                None
            } else {
                Some(w[0] / w[1])
            }
        })
        .collect();
    let (lo, hi) = CONVERGENCE_RATIO_RANGE;
    let passed = ratios.iter().all(|r| r.is_none_or(|x| (lo..=hi).contains(&x)));
    Ok(ConvergenceReport {
        sample_counts: results.iter().map(|r| r.n_samples).collect(),
        standard_errors,
        ratios,
        passed,
    })
}

/// Smallest asperity scale (to within `1e-9` relative) whose estimated
/// 5th-percentile pull-off force reaches `target_p05`, found by bisection
/// with common random numbers. The returned scale always meets the target.
pub fn calibrate_scale(
    cfg: &GripperConfig,
    feature: &FeatureShape,
    pull_direction: &Vector3<f64>,
    target_p05: f64,
    n: usize,
    seed: u64,
) -> Result<f64, GripperError> {
    if !(target_p05 > 0.0) {
        return Err(GripperError::Domain(format!("target must be positive, got {target_p05}")));
    }
    let p05_at = |scale: f64| -> Result<f64, GripperError> {
        let mut c = cfg.clone();
        c.asperity.scale = scale;
        Ok(estimate_pull_distribution(&c, feature, pull_direction, n, seed)?.quantiles.q05)
    };
    let mut hi = cfg.asperity.scale;
    let mut lo = hi;
    let mut grow = 0;
    while p05_at(hi)? < target_p05 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 64 {
            return Err(GripperError::Domain(format!(
                "5th percentile stays below {target_p05} N at any scale (too many failed grasps)"
            )));
        }
    }
    if lo == hi {
        while p05_at(lo)? >= target_p05 {
            hi = lo;
            lo /= 2.0;
            if lo < 1e-12 {
                return Ok(hi);
            }
        }
    }
    while (hi - lo) > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if p05_at(mid)? >= target_p05 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gripper::{AsperityFamily, AsperityModel, EngageCurve, FingerPlacement};
    use nalgebra::Point3;

    fn single_spine(family: AsperityFamily, scale: f64) -> GripperConfig {
        GripperConfig {
            n_fingers: 1,
            spines_per_finger: 1,
            fingers: vec![FingerPlacement::at(0.0, std::f64::consts::FRAC_PI_2, 0.0)],
            asperity: AsperityModel {
                family,
                scale,
                shape: 1.0,
                engage: EngageCurve::Constant { probability: 1.0 },
            },
            ..GripperConfig::default()
        }
    }

    fn ball() -> FeatureShape {
        FeatureShape::Sphere {
            center: Point3::origin(),
            radius: 0.1,
        }
    }

    #[test]
    fn deterministic_family_has_zero_spread() {
        let cfg = single_spine(AsperityFamily::Deterministic, 20.0);
        let d = estimate_pull_distribution(&cfg, &ball(), &Vector3::z(), 500, 1).unwrap();
        assert_eq!(d.variance, 0.0);
        assert_eq!(d.mean, 20.0);
        assert!(d.quantiles.as_array().iter().all(|&q| q == d.mean));
    }

    #[test]
    fn single_sample_flags_warning() {
        let cfg = single_spine(AsperityFamily::Exponential, 10.0);
        let d = estimate_pull_distribution(&cfg, &ball(), &Vector3::z(), 1, 4).unwrap();
        let only = simulate(&cfg, &ball(), &Vector3::z(), 0..1, 4).unwrap()[0].force;
        assert_eq!(d.mean, only);
        assert_eq!(d.variance, 0.0);
        assert!(d.low_sample_warning);
    }

    #[test]
    fn nearest_rank_levels() {
        let sorted: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&sorted, 5), 5.0);
        assert_eq!(nearest_rank(&sorted, 95), 95.0);
        assert_eq!(nearest_rank(&[7.0], 5), 7.0);
        assert_eq!(nearest_rank(&[1.0, 2.0, 3.0], 50), 2.0);
    }

    #[test]
    fn zero_samples_rejected() {
        let cfg = single_spine(AsperityFamily::Exponential, 10.0);
        assert!(estimate_pull_distribution(&cfg, &ball(), &Vector3::z(), 0, 4).is_err());
    }

    #[test]
    fn convergence_rejects_mismatch() {
        let cfg = single_spine(AsperityFamily::Exponential, 10.0);
        let a = estimate_pull_distribution(&cfg, &ball(), &Vector3::z(), 100, 4).unwrap();
        let other = FeatureShape::Sphere {
            center: Point3::origin(),
            radius: 0.2,
        };
        let b = estimate_pull_distribution(&cfg, &other, &Vector3::z(), 400, 4).unwrap();
        assert!(convergence_check(&[a.clone(), b]).is_err());
        let c = estimate_pull_distribution(&cfg, &ball(), &Vector3::z(), 300, 4).unwrap();
        assert!(convergence_check(&[a, c]).is_err());
    }

    #[test]
    fn deterministic_convergence_trivially_passes() {
        let cfg = single_spine(AsperityFamily::Deterministic, 20.0);
        let runs: Vec<_> = [100, 400, 1600]
            .iter()
            .map(|&n| estimate_pull_distribution(&cfg, &ball(), &Vector3::z(), n, 2).unwrap())
            .collect();
        let report = convergence_check(&runs).unwrap();
        assert!(report.passed);
        assert!(report.standard_errors.iter().all(|&s| s == 0.0));
        assert!(report.ratios.iter().all(|r| r.is_none()));
    }

    #[test]
    fn merge_matches_direct_welford() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.5).collect();
        let m = Moments::over(&values);
        let mean = values.iter().sum::<f64>() / 1000.0;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((m.mean - mean).abs() < 1e-12);
        assert!((m.variance() - var).abs() < 1e-9);
        assert_eq!(m.min, 0.0);
        assert_eq!(m.max, 50.0);
    }
}
