//! Point clouds with an immutable spatial index.

mod kdtree;
mod normals;
pub mod ply;

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub use kdtree::KdTree;
pub use normals::{estimate_normal, estimate_normals, NormalEstimate, DEFAULT_NORMAL_K};

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("{0}")]
    Domain(String),
    #[error("degenerate neighborhood (eigenvalues {eigenvalues:?})")]
    DegenerateGeometry { eigenvalues: [f64; 3] },
    #[error("PLY header error at line {line}: {message}")]
    PlyHeader { line: usize, message: String },
    #[error("PLY data error at vertex {index}: {message}")]
    PlyData { index: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PointCloudError>;

/// An ordered, write-once set of 3D points (meters) and its k-d tree.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    frame_id: String,
    index: KdTree,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, frame_id: impl Into<String>) -> Result<Self> {
        if let Some(index) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(PointCloudError::NonFinite { index });
        }
        let index = KdTree::build(&points);
        Ok(Self {
            points,
            frame_id: frame_id.into(),
            index,
        })
    }

    pub fn empty(frame_id: impl Into<String>) -> Self {
        Self {
            points: Vec::new(),
            frame_id: frame_id.into(),
            index: KdTree::build(&[]),
        }
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point3<f64> {
        self.points[index]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    /// The `k` nearest points to `query` as `(index, distance)`, ascending by
    /// distance with ties broken by the lower index.
    pub fn knn(&self, query: &Point3<f64>, k: usize) -> Result<Vec<(usize, f64)>> {
        if self.points.is_empty() {
            return Err(PointCloudError::Domain("knn on an empty cloud".into()));
        }
        if k == 0 {
            return Err(PointCloudError::Domain("knn requires k >= 1".into()));
        }
        Ok(self.index.knn(&self.points, query, k))
    }

    /// Indices of all points within `radius` of `query`, ascending.
    pub fn within_radius(&self, query: &Point3<f64>, radius: f64) -> Vec<usize> {
        self.index.within_radius(&self.points, query, radius)
    }

    /// New cloud holding the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        PointCloud::new(points, self.frame_id.clone()).expect("subset of a finite cloud is finite")
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }
}

/// Replace the points of each occupied voxel by their centroid.
///
/// The grid is anchored at the cloud's minimum corner, so a cloud whose
/// bounding box is smaller than `cell` collapses to its global centroid.
/// Output order follows the voxel key order.
pub fn voxel_downsample(cloud: &PointCloud, cell: f64) -> Result<PointCloud> {
    if !(cell > 0.0) || !cell.is_finite() {
        return Err(PointCloudError::Domain(format!(
            "voxel cell must be positive, got {cell}"
        )));
    }
    if cloud.is_empty() {
        return Ok(PointCloud::empty(cloud.frame_id()));
    }
    let min = cloud.points().iter().fold(
        Vector3::repeat(f64::INFINITY),
        |acc, p| acc.inf(&p.coords),
    );
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for p in cloud.points() {
        let key = voxel_key(&p.coords, &min, cell);
        let entry = cells.entry(key).or_insert((Vector3::zeros(), 0));
        entry.0 += p.coords;
        entry.1 += 1;
    }
    let points = cells
        .into_values()
        .map(|(sum, n)| Point3::from(sum / n as f64))
        .collect();
    PointCloud::new(points, cloud.frame_id())
}

pub(crate) fn voxel_key(p: &Vector3<f64>, origin: &Vector3<f64>, cell: f64) -> [i64; 3] {
    let q = (p - origin) / cell;
    [q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn p(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    #[test]
    fn rejects_non_finite_points() {
        let err = PointCloud::new(vec![p(0.0, 0.0, 0.0), p(f64::NAN, 0.0, 0.0)], "cam").unwrap_err();
        assert!(matches!(err, PointCloudError::NonFinite { index: 1 }));
    }

    #[test]
    fn knn_self_query() {
        let cloud = PointCloud::new(vec![p(0.0, 0.0, 0.0), p(1.0, 2.0, 3.0), p(-1.0, 0.5, 0.0)], "w").unwrap();
        let hits = cloud.knn(&p(1.0, 2.0, 3.0), 1).unwrap();
        assert_eq!(hits, vec![(1, 0.0)]);
    }

    #[test]
    fn knn_square_corners_from_centroid() {
        let cloud = PointCloud::new(
            vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 1.0, 0.0), p(1.0, 1.0, 0.0)],
            "w",
        )
        .unwrap();
        let hits = cloud.knn(&p(0.5, 0.5, 0.0), 4).unwrap();
        let idx: Vec<usize> = hits.iter().map(|h| h.0).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        for (_, d) in hits {
            assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
    }

    #[test]
    fn knn_errors_and_clamps() {
        let empty = PointCloud::empty("w");
        assert!(matches!(empty.knn(&p(0.0, 0.0, 0.0), 1), Err(PointCloudError::Domain(_))));
        let cloud = PointCloud::new(vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)], "w").unwrap();
        assert_eq!(cloud.knn(&p(0.0, 0.0, 0.0), 10).unwrap().len(), 2);
        assert!(cloud.knn(&p(0.0, 0.0, 0.0), 0).is_err());
    }

    #[test]
    fn voxel_one_cell_gives_centroid() {
        let cloud = PointCloud::new(vec![p(0.0, 0.0, 0.0), p(0.2, 0.1, 0.0), p(0.1, 0.2, 0.3)], "w").unwrap();
        let out = voxel_downsample(&cloud, 10.0).unwrap();
        assert_eq!(out.len(), 1);
        let c = cloud.centroid().unwrap();
        assert!((out.point(0) - c).norm() < 1e-15);
    }

    #[test]
    fn voxel_two_points_one_cell() {
        let cloud = PointCloud::new(vec![p(0.0, 0.0, 0.0), p(0.001, 0.0, 0.0)], "w").unwrap();
        let out = voxel_downsample(&cloud, 0.01).unwrap();
        assert_eq!(out.points(), &[p(0.0005, 0.0, 0.0)]);
    }

    #[test]
    fn voxel_rejects_bad_cell() {
        let cloud = PointCloud::new(vec![p(0.0, 0.0, 0.0)], "w").unwrap();
        assert!(voxel_downsample(&cloud, 0.0).is_err());
        assert!(voxel_downsample(&cloud, -1.0).is_err());
    }

    #[test]
    fn voxel_output_keys_unique() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..10_000)
            .map(|_| p(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>() * 0.3))
            .collect();
        let cloud = PointCloud::new(pts, "w").unwrap();
        let cell = 0.02;
        let out = voxel_downsample(&cloud, cell).unwrap();
        assert!(out.len() <= cloud.len());
        // Every input voxel is occupied by exactly one output point: the
        // centroid of a voxel's points stays inside that voxel.
        let min = cloud.points().iter().fold(Vector3::repeat(f64::INFINITY), |a, q| a.inf(&q.coords));
        let input_keys: HashSet<[i64; 3]> = cloud.points().iter().map(|q| voxel_key(&q.coords, &min, cell)).collect();
        let output_keys: Vec<[i64; 3]> = out.points().iter().map(|q| voxel_key(&q.coords, &min, cell)).collect();
        let unique: HashSet<[i64; 3]> = output_keys.iter().copied().collect();
        assert_eq!(unique.len(), output_keys.len());
        assert_eq!(unique, input_keys);
    }
}
