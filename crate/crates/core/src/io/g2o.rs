//! g2o-style text dump of a pose graph (`VERTEX_SE3:QUAT` /
//! `EDGE_SE3:QUAT` lines) for external inspection.

use crate::geom::Pose;
use nalgebra::Matrix6;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Writes vertices and edges. Edge information matrices are emitted as the
/// 21 upper-triangular entries, row-major, following the g2o convention
/// (quaternions as `qx qy qz qw`).
pub fn write_g2o<P: AsRef<Path>>(
    path: P,
    nodes: &[(u32, Pose)],
    edges: &[(u32, u32, Pose, Matrix6<f64>)],
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (id, pose) in nodes {
        let q = pose.rotation.quaternion();
        writeln!(
            w,
            "VERTEX_SE3:QUAT {} {} {} {} {} {} {} {}",
            id,
            pose.translation.x,
            pose.translation.y,
            pose.translation.z,
            q.i,
            q.j,
            q.k,
            q.w
        )?;
    }
    for (from, to, meas, info) in edges {
        let q = meas.rotation.quaternion();
        write!(
            w,
            "EDGE_SE3:QUAT {} {} {} {} {} {} {} {} {}",
            from,
            to,
            meas.translation.x,
            meas.translation.y,
            meas.translation.z,
            q.i,
            q.j,
            q.k,
            q.w
        )?;
        for r in 0..6 {
            for c in r..6 {
                write!(w, " {}", info[(r, c)])?;
            }
        }
        writeln!(w)?;
    }
    w.flush()
}
