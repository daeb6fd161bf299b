//! File formats: the FSLAM binary sensor log, PLY map export, the CSV
//! side-channel formats, and the g2o-style graph dump.

mod csvio;
mod g2o;
mod logfile;
mod ply;

pub use csvio::{
    read_gt_trees_csv, read_trajectory_csv, write_gt_trees_csv, write_lattice_csv,
    write_trajectory_csv, write_trees_csv, GtTree,
};
pub use g2o::write_g2o;
pub use logfile::{read_log, write_log, LogError, LogRecord, DEFAULT_SWEEP_PERIOD};
pub use ply::{read_ply, write_ply, PlyPoint};

/// Point classes stored in exported maps.
pub mod class {
    pub const GROUND: u8 = 0;
    pub const EDGE: u8 = 1;
    pub const PLANAR: u8 = 2;
    pub const OTHER: u8 = 3;
}
