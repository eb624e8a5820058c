use lavagrasp_core::pointcloud::{self, ply, PointCloud, PointCloudError};
use lavagrasp_core::rng;
use lavagrasp_core::Point3;
use proptest::prelude::*;
use rand::Rng;

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut g = rng::stream(seed, 0);
    let pts = (0..n)
        .map(|_| Point3::new(g.random_range(-5.0..5.0), g.random_range(-5.0..5.0), g.random_range(0.0..3.0)))
        .collect();
    PointCloud::new(pts, "scan").unwrap()
}

fn as_f32(cloud: &PointCloud) -> Vec<[f32; 3]> {
    cloud.points().iter().map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect()
}

#[test]
fn binary_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = random_cloud(10_000, 1);
    let first = dir.path().join("a.ply");
    let second = dir.path().join("b.ply");
    ply::save_ply(&cloud, &first, true).unwrap();
    let loaded = ply::load_ply(&first).unwrap();
    assert_eq!(loaded.len(), 10_000);
    assert_eq!(loaded.frame_id(), "scan");
    assert_eq!(as_f32(&loaded), as_f32(&cloud));
    ply::save_ply(&loaded, &second, true).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn ascii_round_trip_keeps_float32_values() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = random_cloud(2_000, 2);
    let path = dir.path().join("a.ply");
    ply::save_ply(&cloud, &path, false).unwrap();
    let loaded = ply::load_ply(&path).unwrap();
    assert_eq!(as_f32(&loaded), as_f32(&cloud));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("ply\nformat ascii 1.0\n"));
}

#[test]
fn comments_survive() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ply");
    let comments = vec!["sensor_origin 0 0 1".to_string()];
    ply::save_ply_with_comments(&random_cloud(10, 3), &path, true, &comments).unwrap();
    let read = ply::read_ply_file(&path).unwrap();
    assert!(read.comments.contains(&comments[0]));
}

#[test]
fn corrupt_files_are_parse_errors() {
    assert!(matches!(ply::parse_ply(b"not a ply"), Err(PointCloudError::PlyHeader { .. })));
    let truncated = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
    assert!(matches!(ply::parse_ply(truncated), Err(PointCloudError::PlyData { .. })));
    let big_endian = b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    assert!(ply::parse_ply(big_endian).is_err());
}

#[test]
fn voxel_keys_unique_on_large_cloud() {
    let cloud = random_cloud(10_000, 4);
    let down = pointcloud::voxel_downsample(&cloud, 0.02).unwrap();
    assert!(down.len() <= cloud.len());
    let mins = cloud.points().iter().fold([f64::INFINITY; 3], |m, p| [m[0].min(p.x), m[1].min(p.y), m[2].min(p.z)]);
    let mut keys = std::collections::HashSet::new();
    for p in down.points() {
        let key = [
            ((p.x - mins[0]) / 0.02).floor() as i64,
            ((p.y - mins[1]) / 0.02).floor() as i64,
            ((p.z - mins[2]) / 0.02).floor() as i64,
        ];
        assert!(keys.insert(key), "duplicate voxel {key:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn knn_matches_exhaustive_scan(n in 1usize..3000, k in 1usize..40, seed in 0u64..10_000, qx in -6.0f64..6.0, qy in -6.0f64..6.0, qz in -1.0f64..4.0) {
        let cloud = random_cloud(n, seed);
        let q = Point3::new(qx, qy, qz);
        let got = cloud.knn(&q, k).unwrap();
        let mut all: Vec<(usize, f64)> = cloud.points().iter().enumerate().map(|(i, p)| (i, (p - q).norm())).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        prop_assert_eq!(got.len(), k.min(n));
        for (g, w) in got.iter().zip(&all) {
            prop_assert_eq!(g.0, w.0);
            prop_assert!((g.1 - w.1).abs() < 1e-12);
        }
    }

    #[test]
    fn normals_face_the_sensor(seed in 0u64..1000, sx in -3.0f64..3.0, sy in -3.0f64..3.0, sz in 3.5f64..6.0) {
        let cloud = random_cloud(300, seed);
        let sensor = Point3::new(sx, sy, sz);
        for i in (0..300).step_by(37) {
            if let Ok(est) = pointcloud::estimate_normal(&cloud, i, 16, &sensor) {
                prop_assert!(est.normal.dot(&(sensor - cloud.point(i))) >= 0.0);
                prop_assert!((est.normal.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
