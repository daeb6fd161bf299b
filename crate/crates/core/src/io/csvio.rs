//! CSV side-channel formats: trajectories, tree tables, lattice dumps.
//!
//! Writers format floats with the shortest round-trip representation so
//! identical inputs always produce byte-identical files.

use crate::geom::{Pose, Trajectory};
use crate::trees::TreeModel;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column order fixed as `time,x,y,z,qw,qx,qy,qz`.
pub fn write_trajectory_csv<P: AsRef<Path>>(path: P, traj: &Trajectory) -> Result<(), CsvError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "time,x,y,z,qw,qx,qy,qz")?;
    for (t, p) in traj.samples() {
        let q = p.rotation.quaternion();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            t, p.translation.x, p.translation.y, p.translation.z, q.w, q.i, q.j, q.k
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<P: AsRef<Path>>(path: P) -> Result<Trajectory, CsvError> {
    let path_str = path.as_ref().display().to_string();
    let r = BufReader::new(File::open(&path)?);
    let mut traj = Trajectory::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CsvError::Parse {
                path: path_str.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if fields.len() != 8 {
            return Err(CsvError::Parse {
                path: path_str.clone(),
                line: i + 1,
                message: format!("expected 8 columns, found {}", fields.len()),
            });
        }
        let pose = Pose::new(
            Vector3::new(fields[1], fields[2], fields[3]),
            UnitQuaternion::new_normalize(Quaternion::new(
                fields[4], fields[5], fields[6], fields[7],
            )),
        );
        traj.push(fields[0], pose);
    }
    Ok(traj)
}

/// Estimated tree table: `tree_id,x,y,dbh_cm,points,fit_rms_mm`.
pub fn write_trees_csv<P: AsRef<Path>>(path: P, trees: &[TreeModel]) -> Result<(), CsvError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "tree_id,x,y,dbh_cm,points,fit_rms_mm")?;
    for t in trees {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.id,
            t.center.0,
            t.center.1,
            t.dbh * 100.0,
            t.point_count,
            t.fit_rms * 1000.0
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Ground-truth tree table row: `tree_id,x,y,dbh_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtTree {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub dbh: f64,
}

pub fn write_gt_trees_csv<P: AsRef<Path>>(path: P, trees: &[GtTree]) -> Result<(), CsvError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "tree_id,x,y,dbh_m")?;
    for t in trees {
        writeln!(w, "{},{},{},{}", t.id, t.x, t.y, t.dbh)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gt_trees_csv<P: AsRef<Path>>(path: P) -> Result<Vec<GtTree>, CsvError> {
    let path_str = path.as_ref().display().to_string();
    let r = BufReader::new(File::open(&path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != 4 {
            return Err(CsvError::Parse {
                path: path_str.clone(),
                line: i + 1,
                message: format!("expected 4 columns, found {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64, CsvError> {
            s.parse().map_err(|_| CsvError::Parse {
                path: path_str.clone(),
                line: i + 1,
                message: format!("bad {what}: {s}"),
            })
        };
        out.push(GtTree {
            id: parse(fields[0], "id")? as u32,
            x: parse(fields[1], "x")?,
            y: parse(fields[2], "y")?,
            dbh: parse(fields[3], "dbh")?,
        });
    }
    Ok(out)
}

/// Ground-lattice debug dump: `ix,iy,h,sx,sy,confidence`.
pub fn write_lattice_csv<P: AsRef<Path>>(
    path: P,
    rows: &[(i32, i32, f64, f64, f64, f64)],
) -> Result<(), CsvError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ix,iy,h,sx,sy,confidence")?;
    for (ix, iy, h, sx, sy, c) in rows {
        writeln!(w, "{},{},{},{},{},{}", ix, iy, h, sx, sy, c)?;
    }
    w.flush()?;
    Ok(())
}
