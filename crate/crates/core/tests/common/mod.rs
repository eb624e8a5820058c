#![allow(dead_code)]

pub mod cascade;

use lavagrasp_core::scenegen::{Aabb, Primitive, SceneSpec};
use lavagrasp_core::{Point3, Vector3};

pub const FLOOR_Z: f64 = -0.6;

pub fn floor() -> Primitive {
    Primitive::Plane {
        point: Point3::new(0.0, 0.0, FLOOR_Z),
        normal: Vector3::z(),
        extent: None,
    }
}

pub fn resting_sphere(x: f64, y: f64, radius: f64) -> Primitive {
    Primitive::Sphere {
        center: Point3::new(x, y, FLOOR_Z + radius),
        radius,
    }
}

/// Boom-base camera looking down the +x axis at the floor.
pub fn scene(primitives: Vec<Primitive>, seed: u64) -> SceneSpec {
    SceneSpec {
        primitives,
        sensor_origin: Point3::origin(),
        look_at: Point3::new(2.0, 0.0, FLOOR_Z),
        fov: [70f64.to_radians(), 50f64.to_radians()],
        samples: 60_000,
        noise_sigma: 0.001,
        outlier_fraction: 0.0,
        outlier_box: None,
        seed,
    }
}

pub fn two_sphere_scene(seed: u64) -> SceneSpec {
    scene(
        vec![floor(), resting_sphere(1.4, -0.35, 0.15), resting_sphere(2.2, 0.4, 0.15)],
        seed,
    )
}

pub fn outlier_box() -> Aabb {
    Aabb {
        min: Point3::new(0.5, -1.5, FLOOR_Z),
        max: Point3::new(3.5, 1.5, 0.5),
    }
}
