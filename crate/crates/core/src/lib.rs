//! Lidar-inertial SLAM for forest environments.
//!
//! The library reconstructs a 3D map and sensor trajectory from sequential
//! 3D-lidar sweeps plus IMU samples, and simultaneously detects individual
//! tree stems and estimates their DBH (diameter at breast height). A
//! deterministic synthetic-forest simulator with exact ground truth is
//! bundled for testing and evaluation.
//!
//! Pipeline stages, in scan order:
//!
//! 1. [`features`] — IMU orientation tracking and sweep de-skew
//! 2. [`ground`] — adaptive elevation-lattice ground labeling
//! 3. [`cluster`] — hierarchical k-means clustering of non-ground points
//! 4. [`features`] — smoothness factor and edge/planar feature selection
//! 5. [`odometry`] — Levenberg-Marquardt scan-to-scan motion estimation
//! 6. [`map`] — cube-indexed global map with dual voxel filters
//! 7. [`graph`] — ICP loop closure and pose-graph optimization
//!
//! [`trees`] analyzes the final map (slice, outlier removal, circle fit),
//! [`eval`] implements the error metrics, [`io`] the log/CSV/PLY formats,
//! and [`pipeline`] wires everything behind a single [`pipeline::run_log`].
//!
//! With the default `parallel` feature the data-parallel inner loops run on
//! rayon; disabling it yields a dependency-free sequential build with
//! identical outputs.

pub mod cluster;
pub mod eval;
pub mod features;
pub mod geom;
pub mod graph;
pub mod ground;
pub mod io;
pub mod map;
pub mod odometry;
pub mod pipeline;
mod runpar;
pub mod sim;
mod spatial;
pub mod trees;

pub use geom::{ImuSample, Point3, Pose, RangePoint, Scan, Trajectory};
pub use pipeline::{PipelineConfig, RunArtifacts, RunReport};
