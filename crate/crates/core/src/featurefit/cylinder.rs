use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Point3, SymmetricEigen, Vector2, Vector3};

use super::msac::{self, Estimator, MsacTrace};
use super::{region_points, CylinderFit, FitError, MsacConfig, Result};
use crate::pointcloud::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Cylinder {
    pub axis_point: Point3<f64>,
    pub axis_dir: Vector3<f64>,
    pub radius: f64,
}

/// Distance from `p` to the surface of the infinite cylinder.
pub fn cylinder_residual(axis_point: &Point3<f64>, axis_dir: &Vector3<f64>, radius: f64, p: &Point3<f64>) -> f64 {
    let v = p - axis_point;
    let radial = v - axis_dir * v.dot(axis_dir);
    (radial.norm() - radius).abs()
}

fn orthonormal_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = axis.cross(&helper).normalize();
    let w = axis.cross(&u);
    (u, w)
}

struct CylinderEstimator {
    points: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
}

impl CylinderEstimator {
    /// Cylinder from two oriented points: the axis is orthogonal to both
    /// normals, and the projected normal lines meet on the axis.
    fn from_two(&self, i: usize, j: usize) -> Option<Cylinder> {
        let (p1, n1) = (self.points[i].coords, self.normals[i]);
        let (p2, n2) = (self.points[j].coords, self.normals[j]);
        let axis = n1.cross(&n2);
        let len = axis.norm();
        if len < 1e-3 {
            return None;
        }
        let axis = axis / len;
        let project = |v: Vector3<f64>| v - axis * v.dot(&axis);
        let (q1, q2) = (project(p1), project(p2));
        let (m1, m2) = (project(n1), project(n2));
        // q1 + t m1 = q2 + s m2, solved in the least-squares sense.
        let a = Matrix2::new(m1.dot(&m1), -m1.dot(&m2), m1.dot(&m2), -m2.dot(&m2));
        let d = q2 - q1;
        let rhs = Vector2::new(m1.dot(&d), m2.dot(&d));
        let ts = a.lu().solve(&rhs)?;
        let c1 = q1 + m1 * ts[0];
        let c2 = q2 + m2 * ts[1];
        let center = (c1 + c2) / 2.0;
        let radius = ((q1 - center).norm() + (q2 - center).norm()) / 2.0;
        (radius.is_finite() && radius > 0.0).then(|| Cylinder {
            axis_point: Point3::from(center),
            axis_dir: axis,
            radius,
        })
    }
}

impl Estimator for CylinderEstimator {
    type Model = Cylinder;
    const SAMPLE_SIZE: usize = 2;

    fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    fn from_sample(&self, sample: &[usize]) -> Option<Cylinder> {
        self.from_two(sample[0], sample[1])
    }

    /// Axis from the inlier normals, then an algebraic circle fit in the
    /// plane orthogonal to it.
    fn refine(&self, inliers: &[usize]) -> Option<Cylinder> {
        if inliers.len() < 3 {
            return None;
        }
        let mut scatter = Matrix3::zeros();
        for &i in inliers {
            scatter += self.normals[i] * self.normals[i].transpose();
        }
        let eig = SymmetricEigen::new(scatter);
        let axis = eig.eigenvectors.column(eig.eigenvalues.imin()).normalize();
        let (u, w) = orthonormal_basis(&axis);
        let mut a = DMatrix::zeros(inliers.len(), 3);
        let mut b = DVector::zeros(inliers.len());
        for (row, &i) in inliers.iter().enumerate() {
            let p = self.points[i].coords;
            let (x, y) = (p.dot(&u), p.dot(&w));
            a[(row, 0)] = x;
            a[(row, 1)] = y;
            a[(row, 2)] = 1.0;
            b[row] = -(x * x + y * y);
        }
        let sol = a.svd(true, true).solve(&b, 1e-14).ok()?;
        let (cx, cy) = (-sol[0] / 2.0, -sol[1] / 2.0);
        let r2 = cx * cx + cy * cy - sol[2];
        (r2 > 0.0 && r2.is_finite()).then(|| Cylinder {
            axis_point: Point3::from(u * cx + w * cy),
            axis_dir: axis,
            radius: r2.sqrt(),
        })
    }

    fn residual(&self, model: &Cylinder, p: &Point3<f64>) -> f64 {
        cylinder_residual(&model.axis_point, &model.axis_dir, model.radius, p)
    }

    fn radius(model: &Cylinder) -> f64 {
        model.radius
    }
}

/// MSAC cylinder fit. `normals[i]` is the surface normal at `region[i]`.
pub fn fit_cylinder_msac(
    cloud: &PointCloud,
    region: &[usize],
    normals: &[Vector3<f64>],
    cfg: &MsacConfig,
) -> Result<CylinderFit> {
    fit_cylinder_msac_traced(cloud, region, normals, cfg).map(|(fit, _)| fit)
}

pub fn fit_cylinder_msac_traced(
    cloud: &PointCloud,
    region: &[usize],
    normals: &[Vector3<f64>],
    cfg: &MsacConfig,
) -> Result<(CylinderFit, MsacTrace)> {
    cfg.validate()?;
    if region.len() < 6 {
        return Err(FitError::Domain(format!(
            "cylinder fitting needs at least 6 points, region has {}",
            region.len()
        )));
    }
    if normals.len() != region.len() {
        return Err(FitError::Domain(format!(
            "{} normals supplied for a region of {} points",
            normals.len(),
            region.len()
        )));
    }
    let raw = region_points(cloud, region)?;
    let origin = raw.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / raw.len() as f64;
    let est = CylinderEstimator {
        points: raw.iter().map(|p| Point3::from(p.coords - origin)).collect(),
        normals: normals.iter().map(|n| n.normalize()).collect(),
    };
    let mut trace = MsacTrace::default();
    let out = msac::run(&est, cfg, &mut trace)?;
    let mut inliers: Vec<usize> = out.inliers.iter().map(|&i| region[i]).collect();
    inliers.sort_unstable();
    // Canonical axis sign: first non-zero component positive.
    let mut axis = out.model.axis_dir;
    let lead = if axis.x.abs() > 1e-12 { axis.x } else if axis.y.abs() > 1e-12 { axis.y } else { axis.z };
    if lead < 0.0 {
        axis = -axis;
    }
    Ok((
        CylinderFit {
            axis_point: Point3::from(out.model.axis_point.coords + origin),
            axis_dir: axis,
            radius: out.model.radius,
            msac_score: out.score,
            inliers,
            iterations_used: out.iterations,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_oriented_points_define_cylinder() {
        let est = CylinderEstimator {
            points: vec![Point3::new(0.1, 0.0, 0.3), Point3::new(0.0, 0.1, -0.2)],
            normals: vec![Vector3::x(), Vector3::y()],
        };
        let c = est.from_two(0, 1).unwrap();
        assert!((c.axis_dir.cross(&Vector3::z())).norm() < 1e-12);
        assert!((c.radius - 0.1).abs() < 1e-12);
        assert!(cylinder_residual(&c.axis_point, &c.axis_dir, c.radius, &Point3::new(-0.1, 0.0, 5.0)) < 1e-12);
    }

    #[test]
    fn parallel_normals_rejected() {
        let est = CylinderEstimator {
            points: vec![Point3::new(0.1, 0.0, 0.3), Point3::new(0.1, 0.0, -0.2)],
            normals: vec![Vector3::x(), Vector3::x()],
        };
        assert!(est.from_two(0, 1).is_none());
    }

    #[test]
    fn five_points_is_domain_error() {
        let cloud = PointCloud::new(vec![Point3::origin(); 5], "w").unwrap();
        let normals = vec![Vector3::z(); 5];
        let err = fit_cylinder_msac(&cloud, &[0, 1, 2, 3, 4], &normals, &MsacConfig::default()).unwrap_err();
        assert!(matches!(err, FitError::Domain(_)));
    }
}
