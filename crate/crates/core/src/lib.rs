//! Grasp-site selection and grasp-strength estimation for a boom-mounted
//! microspine gripper.
//!
//! The crate is organised as a two-stage perception pipeline plus the
//! mechanics needed to score a site:
//!
//! * [`pointcloud`]: point clouds, k-d tree neighbor queries, PCA normals,
//!   voxel downsampling and PLY I/O.
//! * [`featurefit`]: MSAC fitting of spheres and cylinders.
//! * [`gripper`]: whiffletree load sharing and the stochastic spine model.
//! * [`montecarlo`]: pull-off force distributions by repeated sampling.
//! * [`boom`]: pan/elevation/extension kinematics of the shoulder.
//! * [`scenegen`]: ray-cast synthetic scans with ground-truth labels.
//! * [`pipeline`]: far scan, near-scan verification and site scoring.
//! * [`report`]: JSON run reports and pull-test CSV rows.

pub mod boom;
pub mod config;
pub mod featurefit;
pub mod gripper;
pub mod montecarlo;
pub mod pipeline;
pub mod pointcloud;
pub mod report;
pub mod rng;
pub mod scenegen;

pub use nalgebra::{Point3, Vector3};
