use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PointCloud, PointCloudError, Result};

pub const DEFAULT_NORMAL_K: usize = 16;

/// Relative eigenvalue floor below which a neighborhood counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalEstimate {
    pub point_index: usize,
    pub normal: Vector3<f64>,
    pub k_used: usize,
    /// Smallest eigenvalue over the eigenvalue sum, 0 for a perfect plane.
    pub planarity: f64,
}

/// PCA normal of the `k`-neighborhood of `point_index`, oriented toward
/// `sensor_origin`.
pub fn estimate_normal(
    cloud: &PointCloud,
    point_index: usize,
    k: usize,
    sensor_origin: &Point3<f64>,
) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(PointCloudError::Domain(format!("normal estimation needs k >= 3, got {k}")));
    }
    if cloud.len() < k {
        return Err(PointCloudError::Domain(format!(
            "cloud has {} points, fewer than k = {k}",
            cloud.len()
        )));
    }
    if point_index >= cloud.len() {
        return Err(PointCloudError::Domain(format!("point index {point_index} out of range")));
    }
    let center = cloud.point(point_index);
    let neighbors = cloud.knn(&center, k)?;
    let pts: Vec<Point3<f64>> = neighbors.iter().map(|&(i, _)| cloud.point(i)).collect();
    let (normal, eigenvalues) = pca_normal(&pts)?;

    let total: f64 = eigenvalues.iter().sum();
    let planarity = if total > 0.0 { (eigenvalues[0] / total).clamp(0.0, 1.0) } else { 0.0 };
    let normal = if normal.dot(&(sensor_origin - center)) < 0.0 { -normal } else { normal };
    Ok(NormalEstimate {
        point_index,
        normal,
        k_used: pts.len(),
        planarity,
    })
}

/// Normals for every index in `indices`, in order.
pub fn estimate_normals(
    cloud: &PointCloud,
    indices: &[usize],
    k: usize,
    sensor_origin: &Point3<f64>,
) -> Vec<Result<NormalEstimate>> {
    indices
        .par_iter()
        .map(|&i| estimate_normal(cloud, i, k, sensor_origin))
        .collect()
}

/// Smallest-eigenvalue eigenvector of the scatter matrix and the ascending
/// eigenvalues of the covariance.
pub(crate) fn pca_normal(pts: &[Point3<f64>]) -> Result<(Vector3<f64>, [f64; 3])> {
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = [
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    ];
    if values[2] <= 0.0 || values[1] <= RANK_TOLERANCE * values[2] {
        return Err(PointCloudError::DegenerateGeometry { eigenvalues: values });
    }
    let normal = eig.eigenvectors.column(order[0]).normalize();
    Ok((normal, values))
}
