//! The FSLAM binary sensor-log format.
//!
//! Layout: an 8-byte magic `FSLMLOG1`, then length-prefixed records. Each
//! record is `u32` length (bytes that follow), a type byte (0x01 SCAN,
//! 0x02 IMU, 0x03 GT_POSE), a little-endian `f64` timestamp, and the
//! payload:
//!
//! * SCAN — point count (`u32`), then per point `f32` x, y, z, `f32`
//!   range, `u16` ring, `f32` azimuth, `f32` time offset;
//! * IMU — 6 × `f64`: gyro xyz, accelerometer xyz;
//! * GT_POSE — 7 × `f64`: translation xyz, quaternion w x y z.
//!
//! All floats are little-endian. The scan payload carries no sweep end
//! time; readers reconstruct it from the sweep period (5 Hz default).

use crate::geom::{ImuSample, Point3, Pose, RangePoint, Scan};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"FSLMLOG1";
pub const DEFAULT_SWEEP_PERIOD: f64 = 0.2;

const TYPE_SCAN: u8 = 0x01;
const TYPE_IMU: u8 = 0x02;
const TYPE_GT_POSE: u8 = 0x03;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("bad magic: not an FSLAM log")]
    BadMagic,
    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("unknown record type {kind:#04x} at byte offset {offset}")]
    UnknownType { kind: u8, offset: u64 },
    #[error("scan record at byte offset {offset} declares more points than its length holds")]
    CountMismatch { offset: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One record of the sensor log.
#[derive(Debug, Clone)]
pub enum LogRecord {
    Scan(Scan),
    Imu(ImuSample),
    GtPose { time: f64, pose: Pose },
}

impl LogRecord {
    pub fn time(&self) -> f64 {
        match self {
            LogRecord::Scan(s) => s.start_time,
            LogRecord::Imu(s) => s.time,
            LogRecord::GtPose { time, .. } => *time,
        }
    }

    pub fn kind(&self) -> u8 {
        match self {
            LogRecord::Scan(_) => TYPE_SCAN,
            LogRecord::Imu(_) => TYPE_IMU,
            LogRecord::GtPose { .. } => TYPE_GT_POSE,
        }
    }
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_record(rec: &LogRecord) -> Vec<u8> {
    let mut e = Encoder::new();
    e.buf.push(rec.kind());
    e.f64(rec.time());
    match rec {
        LogRecord::Scan(scan) => {
            e.u32(scan.points.len() as u32);
            for p in &scan.points {
                e.f32(p.position.x as f32);
                e.f32(p.position.y as f32);
                e.f32(p.position.z as f32);
                e.f32(p.range as f32);
                e.u16(p.ring);
                e.f32(p.azimuth as f32);
                e.f32(p.time_offset as f32);
            }
        }
        LogRecord::Imu(s) => {
            for v in [
                s.angular_rate.x,
                s.angular_rate.y,
                s.angular_rate.z,
                s.linear_accel.x,
                s.linear_accel.y,
                s.linear_accel.z,
            ] {
                e.f64(v);
            }
        }
        LogRecord::GtPose { pose, .. } => {
            let q = pose.rotation.quaternion();
            for v in [
                pose.translation.x,
                pose.translation.y,
                pose.translation.z,
                q.w,
                q.i,
                q.j,
                q.k,
            ] {
                e.f64(v);
            }
        }
    }
    e.buf
}

pub fn write_log<P: AsRef<Path>>(path: P, records: &[LogRecord]) -> Result<(), LogError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for rec in records {
        let body = encode_record(rec);
        w.write_all(&(body.len() as u32).to_le_bytes())?;
        w.write_all(&body)?;
    }
    w.flush()?;
    Ok(())
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    record_offset: u64,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LogError> {
        if self.pos + n > self.buf.len() {
            return Err(LogError::Truncated {
                offset: self.record_offset,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, LogError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, LogError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, LogError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64, LogError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn f64(&mut self) -> Result<f64, LogError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a log file. Scan end times are reconstructed as
/// `start + sweep_period`. Out-of-order records are accepted with a
/// warning and resorted.
pub fn read_log<P: AsRef<Path>>(path: P, sweep_period: f64) -> Result<Vec<LogRecord>, LogError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| LogError::BadMagic)?;
    if &magic != MAGIC {
        return Err(LogError::BadMagic);
    }

    let mut records = Vec::new();
    let mut offset: u64 = 8;
    loop {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len_buf) as usize;
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)
            .map_err(|_| LogError::Truncated { offset })?;
        let mut d = Decoder {
            buf: &body,
            pos: 0,
            record_offset: offset,
        };
        let kind = d.u8()?;
        let time = d.f64()?;
        let rec = match kind {
            TYPE_SCAN => {
                let count = d.u32()? as usize;
                if body.len() < 1 + 8 + 4 + count * 26 {
                    return Err(LogError::CountMismatch { offset });
                }
                let mut points = Vec::with_capacity(count);
                for _ in 0..count {
                    let x = d.f32()?;
                    let y = d.f32()?;
                    let z = d.f32()?;
                    let range = d.f32()?;
                    let ring = d.u16()?;
                    let azimuth = d.f32()?;
                    let time_offset = d.f32()?;
                    points.push(RangePoint {
                        position: Point3::new(x, y, z),
                        range,
                        ring,
                        azimuth,
                        time_offset,
                    });
                }
                LogRecord::Scan(Scan {
                    points,
                    start_time: time,
                    end_time: time + sweep_period,
                })
            }
            TYPE_IMU => {
                let g = Vector3::new(d.f64()?, d.f64()?, d.f64()?);
                let a = Vector3::new(d.f64()?, d.f64()?, d.f64()?);
                LogRecord::Imu(ImuSample {
                    time,
                    angular_rate: g,
                    linear_accel: a,
                })
            }
            TYPE_GT_POSE => {
                let t = Vector3::new(d.f64()?, d.f64()?, d.f64()?);
                let q = Quaternion::new(d.f64()?, d.f64()?, d.f64()?, d.f64()?);
                LogRecord::GtPose {
                    time,
                    pose: Pose::new(t, UnitQuaternion::new_normalize(q)),
                }
            }
            other => {
                return Err(LogError::UnknownType {
                    kind: other,
                    offset,
                })
            }
        };
        records.push(rec);
        offset += 4 + len as u64;
    }

    let sorted = records
        .windows(2)
        .all(|w| w[0].time() <= w[1].time() || w[0].kind() != w[1].kind());
    if !sorted {
        log::warn!("log records out of time order; resorting");
    }
    records.sort_by(|a, b| a.time().total_cmp(&b.time()).then(a.kind().cmp(&b.kind())));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_records() -> Vec<LogRecord> {
        let scan = Scan {
            points: vec![
                RangePoint {
                    position: Point3::new(1.0, 2.0, 3.0),
                    range: 3.7416575f32 as f64,
                    ring: 4,
                    azimuth: 0.5,
                    time_offset: 0.01,
                },
                RangePoint {
                    position: Point3::new(-1.5, 0.25, 0.125),
                    range: 1.5255327f32 as f64,
                    ring: 5,
                    azimuth: 1.25,
                    time_offset: 0.05,
                },
            ],
            start_time: 0.0,
            end_time: 0.2,
        };
        let imu = ImuSample {
            time: 0.05,
            angular_rate: Vector3::new(0.1, -0.2, 0.3),
            linear_accel: Vector3::new(0.0, 0.0, 9.81),
        };
        vec![
            LogRecord::Scan(scan),
            LogRecord::Imu(imu),
            LogRecord::GtPose {
                time: 0.0,
                pose: Pose::from_translation(1.0, 2.0, 3.0),
            },
        ]
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.fslam");
        let p2 = dir.path().join("b.fslam");
        let records = sample_records();
        write_log(&p1, &records).unwrap();
        let back = read_log(&p1, 0.2).unwrap();
        write_log(&p2, &back).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn empty_log_roundtrips() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("empty.fslam");
        write_log(&p, &[]).unwrap();
        let back = read_log(&p, 0.2).unwrap();
        assert!(back.is_empty());
        assert_eq!(std::fs::read(&p).unwrap(), MAGIC);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.fslam");
        std::fs::write(&p, b"NOTALOG!").unwrap();
        assert!(matches!(read_log(&p, 0.2), Err(LogError::BadMagic)));
    }

    #[test]
    fn truncated_record_names_offset() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("trunc.fslam");
        write_log(&p, &sample_records()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&p, &bytes).unwrap();
        match read_log(&p, 0.2) {
            Err(LogError::Truncated { offset }) => assert!(offset > 8),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }
}
