use nalgebra::{DMatrix, DVector, Matrix4, Point3, Vector3, Vector4};

use super::msac::{self, Estimator, MsacTrace};
use super::{region_points, FitError, MsacConfig, Result, SphereFit};
use crate::pointcloud::PointCloud;
use crate::rng;

/// Minimal samples whose design matrix is worse conditioned than this are
/// treated as coplanar.
const MAX_SAMPLE_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Sphere {
    pub center: Point3<f64>,
    pub radius: f64,
}

pub fn sphere_residual(center: &Point3<f64>, radius: f64, p: &Point3<f64>) -> f64 {
    ((p - center).norm() - radius).abs()
}

/// Exact sphere through four points, `None` for (near-)coplanar input.
///
/// Solves `x² + y² + z² + D x + E y + F z + G = 0` in coordinates centred
/// on the sample mean.
pub fn circumsphere(pts: &[Point3<f64>; 4]) -> Option<(Point3<f64>, f64)> {
    let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / 4.0;
    let mut a = Matrix4::zeros();
    let mut b = Vector4::zeros();
    for (row, p) in pts.iter().enumerate() {
        let v = p.coords - mean;
        a[(row, 0)] = v.x;
        a[(row, 1)] = v.y;
        a[(row, 2)] = v.z;
        a[(row, 3)] = 1.0;
        b[row] = -v.norm_squared();
    }
    let svd = a.svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(min > 0.0) || max / min > MAX_SAMPLE_CONDITION {
        return None;
    }
    let x = svd.solve(&b, 0.0).ok()?;
    let c = Vector3::new(-x[0] / 2.0, -x[1] / 2.0, -x[2] / 2.0);
    let r2 = c.norm_squared() - x[3];
    if !(r2 > 0.0) || !r2.is_finite() {
        return None;
    }
    Some((Point3::from(c + mean), r2.sqrt()))
}

/// Algebraic least-squares sphere through `pts`.
pub(crate) fn least_squares_sphere(pts: &[Point3<f64>]) -> Option<Sphere> {
    if pts.len() < 4 {
        return None;
    }
    let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / pts.len() as f64;
    let mut a = DMatrix::zeros(pts.len(), 4);
    let mut b = DVector::zeros(pts.len());
    for (row, p) in pts.iter().enumerate() {
        let v = p.coords - mean;
        a[(row, 0)] = v.x;
        a[(row, 1)] = v.y;
        a[(row, 2)] = v.z;
        a[(row, 3)] = 1.0;
        b[row] = -v.norm_squared();
    }
    let x = a.svd(true, true).solve(&b, 1e-14).ok()?;
    let c = Vector3::new(-x[0] / 2.0, -x[1] / 2.0, -x[2] / 2.0);
    let r2 = c.norm_squared() - x[3];
    (r2 > 0.0 && r2.is_finite()).then(|| Sphere {
        center: Point3::from(c + mean),
        radius: r2.sqrt(),
    })
}

struct SphereEstimator {
    points: Vec<Point3<f64>>,
}

impl Estimator for SphereEstimator {
    type Model = Sphere;
    const SAMPLE_SIZE: usize = 4;

    fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    fn from_sample(&self, sample: &[usize]) -> Option<Sphere> {
        let pts = [
            self.points[sample[0]],
            self.points[sample[1]],
            self.points[sample[2]],
            self.points[sample[3]],
        ];
        circumsphere(&pts).map(|(center, radius)| Sphere { center, radius })
    }

    fn refine(&self, inliers: &[usize]) -> Option<Sphere> {
        let pts: Vec<Point3<f64>> = inliers.iter().map(|&i| self.points[i]).collect();
        least_squares_sphere(&pts)
    }

    fn residual(&self, model: &Sphere, p: &Point3<f64>) -> f64 {
        sphere_residual(&model.center, model.radius, p)
    }

    fn radius(model: &Sphere) -> f64 {
        model.radius
    }
}

pub fn fit_sphere_msac(cloud: &PointCloud, region: &[usize], cfg: &MsacConfig) -> Result<SphereFit> {
    fit_sphere_msac_traced(cloud, region, cfg).map(|(fit, _)| fit)
}

/// [`fit_sphere_msac`] that also returns the per-hypothesis trace.
pub fn fit_sphere_msac_traced(
    cloud: &PointCloud,
    region: &[usize],
    cfg: &MsacConfig,
) -> Result<(SphereFit, MsacTrace)> {
    cfg.validate()?;
    if region.len() < 4 {
        return Err(FitError::Domain(format!(
            "sphere fitting needs at least 4 points, region has {}",
            region.len()
        )));
    }
    let raw = region_points(cloud, region)?;
    let origin = raw.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / raw.len() as f64;
    let est = SphereEstimator {
        points: raw.iter().map(|p| Point3::from(p.coords - origin)).collect(),
    };
    let mut trace = MsacTrace::default();
    let out = msac::run(&est, cfg, &mut trace)?;
    let sse: f64 = out
        .inliers
        .iter()
        .map(|&i| est.residual(&out.model, &est.points[i]).powi(2))
        .sum();
    let inlier_mse = sse / out.inliers.len().max(1) as f64;
    let mut inliers: Vec<usize> = out.inliers.iter().map(|&i| region[i]).collect();
    inliers.sort_unstable();
    Ok((
        SphereFit {
            center: Point3::from(out.model.center.coords + origin),
            radius: out.model.radius,
            msac_score: out.score,
            inlier_mse,
            inliers,
            iterations_used: out.iterations,
        },
        trace,
    ))
}

/// Greedy sequential sphere extraction over the whole cloud.
///
/// Fits, removes the inliers and repeats until no admissible sphere remains
/// or `max_features` are found. Round `i` runs with a seed derived from
/// `(cfg.seed, i)`. The result is sorted by score per inlier.
pub fn find_spherical_regions(cloud: &PointCloud, cfg: &MsacConfig, max_features: usize) -> Result<Vec<SphereFit>> {
    cfg.validate()?;
    let mut remaining: Vec<usize> = (0..cloud.len()).collect();
    let mut found = Vec::new();
    for round in 0..max_features {
        if remaining.len() < 4 {
            break;
        }
        let round_cfg = MsacConfig {
            seed: rng::mix(cfg.seed, round as u64),
            ..cfg.clone()
        };
        match fit_sphere_msac(cloud, &remaining, &round_cfg) {
            Ok(fit) => {
                remaining.retain(|i| fit.inliers.binary_search(i).is_err());
                found.push(fit);
            }
            Err(FitError::NoFeatureFound(_)) => break,
            Err(e) => return Err(e),
        }
    }
    found.sort_by(|a, b| a.normalized_score().total_cmp(&b.normalized_score()));
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circumsphere_of_tetrahedron() {
        let c = Point3::new(0.3, -1.0, 2.0);
        let r = 0.25;
        let pts = [
            c + Vector3::new(r, 0.0, 0.0),
            c + Vector3::new(0.0, r, 0.0),
            c + Vector3::new(0.0, 0.0, r),
            c + Vector3::new(-r, 0.0, 0.0),
        ];
        let (center, radius) = circumsphere(&pts).unwrap();
        assert!((center - c).norm() < 1e-12);
        assert!((radius - r).abs() < 1e-12);
    }

    #[test]
    fn coplanar_sample_is_rejected() {
        let pts = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
        ];
        assert!(circumsphere(&pts).is_none());
        let nearly = [pts[0], pts[1], pts[2], Point3::new(1.0, 1.0, 1e-12)];
        assert!(circumsphere(&nearly).is_none());
    }

    #[test]
    fn region_too_small() {
        let cloud = PointCloud::new(vec![Point3::origin(); 3], "w").unwrap();
        let err = fit_sphere_msac(&cloud, &[0, 1, 2], &MsacConfig::default()).unwrap_err();
        assert!(matches!(err, FitError::Domain(_)));
    }

    #[test]
    fn max_features_zero_is_empty() {
        let cloud = PointCloud::new(vec![Point3::origin(); 10], "w").unwrap();
        assert!(find_spherical_regions(&cloud, &MsacConfig::default(), 0).unwrap().is_empty());
    }

    #[test]
    fn invalid_config_is_domain_error() {
        let cloud = PointCloud::new(vec![Point3::origin(); 10], "w").unwrap();
        let cfg = MsacConfig {
            r_min: 0.5,
            r_max: 0.1,
            ..MsacConfig::default()
        };
        let region: Vec<usize> = (0..10).collect();
        assert!(matches!(fit_sphere_msac(&cloud, &region, &cfg), Err(FitError::Domain(_))));
    }
}
