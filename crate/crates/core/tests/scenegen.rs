mod common;

use lavagrasp_core::scenegen::{self, PointLabel, Primitive, SceneError, SceneSpec, SENSOR_RANGE};
use lavagrasp_core::{Point3, Vector3};
use proptest::prelude::*;

fn single(primitive: Primitive, look_at: Point3<f64>) -> SceneSpec {
    SceneSpec {
        primitives: vec![primitive],
        sensor_origin: Point3::origin(),
        look_at,
        fov: [40f64.to_radians(), 40f64.to_radians()],
        samples: 4000,
        noise_sigma: 0.0,
        outlier_fraction: 0.0,
        outlier_box: None,
        seed: 0,
    }
}

#[test]
fn small_sphere_occludes_the_wall() {
    let sphere_center = Point3::new(1.5, 0.0, 0.0);
    let radius = 0.2;
    let spec = SceneSpec {
        primitives: vec![
            Primitive::Plane {
                point: Point3::new(3.0, 0.0, 0.0),
                normal: -Vector3::x(),
                extent: None,
            },
            Primitive::Sphere {
                center: sphere_center,
                radius,
            },
        ],
        ..single(
            Primitive::Sphere {
                center: sphere_center,
                radius,
            },
            sphere_center,
        )
    };
    let scan = scenegen::generate_scan(&spec).unwrap();
    // Half-angle of the silhouette cone seen from the sensor.
    let cone = (radius / 1.5f64).asin();
    let mut wall = 0;
    let mut ball = 0;
    for (p, label) in scan.cloud.points().iter().zip(&scan.labels) {
        let angle = p.coords.normalize().dot(&Vector3::x()).clamp(-1.0, 1.0).acos();
        match label {
            PointLabel::Primitive(0) => {
                wall += 1;
                assert!(angle >= cone - 1e-12, "wall point inside the silhouette at {angle}");
            }
            PointLabel::Primitive(1) => {
                ball += 1;
                assert!(angle <= cone + 1e-12);
            }
            other => panic!("unexpected label {other:?}"),
        }
    }
    assert!(wall > 0 && ball > 0);
}

#[test]
fn noiseless_points_satisfy_their_primitive() {
    let spec = common::scene(
        vec![
            common::floor(),
            common::resting_sphere(1.5, 0.0, 0.2),
            Primitive::Cylinder {
                axis_point: Point3::new(2.5, -0.5, common::FLOOR_Z),
                axis_dir: Vector3::z(),
                radius: 0.1,
                half_length: Some(0.5),
            },
        ],
        0,
    );
    let spec = SceneSpec {
        noise_sigma: 0.0,
        ..spec
    };
    let scan = scenegen::generate_scan(&spec).unwrap();
    for (p, label) in scan.cloud.points().iter().zip(&scan.labels) {
        let PointLabel::Primitive(i) = *label else { panic!("no outliers requested") };
        assert!(spec.primitives[i].surface_distance(p) < 1e-9);
    }
}

#[test]
fn surface_at_thirty_centimeters_is_empty() {
    let spec = single(
        Primitive::Plane {
            point: Point3::new(0.3, 0.0, 0.0),
            normal: Vector3::x(),
            extent: None,
        },
        Point3::new(1.0, 0.0, 0.0),
    );
    assert!(matches!(scenegen::generate_scan(&spec), Err(SceneError::EmptyScan)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn returns_stay_in_range(seed in 0u64..1000, d in 0.2f64..8.0, r in 0.05f64..1.5, outliers in 0.0f64..0.5, sigma in 0.0f64..0.05) {
        let spec = SceneSpec {
            samples: 1500,
            noise_sigma: sigma,
            outlier_fraction: outliers,
            outlier_box: Some(common::outlier_box()),
            seed,
            ..single(Primitive::Sphere { center: Point3::new(d, 0.0, 0.0), radius: r }, Point3::new(1.0, 0.0, 0.0))
        };
        match scenegen::generate_scan(&spec) {
            Ok(scan) => {
                for p in scan.cloud.points() {
                    let range = p.coords.norm();
                    prop_assert!(range >= SENSOR_RANGE[0] && range <= SENSOR_RANGE[1]);
                }
                let again = scenegen::generate_scan(&spec).unwrap();
                prop_assert_eq!(again.cloud.points(), scan.cloud.points());
                prop_assert_eq!(again.labels, scan.labels);
            }
            Err(SceneError::EmptyScan) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
