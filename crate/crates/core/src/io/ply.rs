//! Binary little-endian PLY export for classified point clouds.

use crate::geom::Point3;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("not a binary little-endian PLY with x/y/z/class vertices")]
    BadHeader,
    #[error("vertex data shorter than the declared element count")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A classified map point: position plus a class byte (see [`crate::io::class`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyPoint {
    pub position: Point3,
    pub class: u8,
}

/// Writes points as `binary_little_endian` PLY with `float x,y,z` and
/// `uchar class` properties. The caller provides a deterministic order.
pub fn write_ply<P: AsRef<Path>>(path: P, points: &[PlyPoint]) -> Result<(), PlyError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar class\nend_header\n",
        points.len()
    )?;
    for p in points {
        w.write_all(&(p.position.x as f32).to_le_bytes())?;
        w.write_all(&(p.position.y as f32).to_le_bytes())?;
        w.write_all(&(p.position.z as f32).to_le_bytes())?;
        w.write_all(&[p.class])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ply<P: AsRef<Path>>(path: P) -> Result<Vec<PlyPoint>, PlyError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut count: Option<usize> = None;
    let mut line = String::new();
    let mut saw_format = false;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(PlyError::BadHeader);
        }
        let t = line.trim();
        if t.starts_with("format") {
            saw_format = t == "format binary_little_endian 1.0";
        } else if let Some(rest) = t.strip_prefix("element vertex ") {
            count = rest.parse().ok();
        } else if t == "end_header" {
            break;
        }
    }
    if !saw_format {
        return Err(PlyError::BadHeader);
    }
    let count = count.ok_or(PlyError::BadHeader)?;
    let mut points = Vec::with_capacity(count);
    let mut buf = [0u8; 13];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(|_| PlyError::Truncated)?;
        let x = f32::from_le_bytes(buf[0..4].try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(buf[4..8].try_into().unwrap()) as f64;
        let z = f32::from_le_bytes(buf[8..12].try_into().unwrap()) as f64;
        points.push(PlyPoint {
            position: Point3::new(x, y, z),
            class: buf[12],
        });
    }
    Ok(points)
}
