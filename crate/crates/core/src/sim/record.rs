//! Full simulation runs: sweeps, IMU stream and ground truth together.

use super::track::PoseTrack;
use super::{simulate_imu, simulate_sweep, ImuSpec, LidarSpec, WorldModel};
use crate::geom::{ImuSample, Scan, Trajectory};
use crate::io::LogRecord;
use crate::runpar;

/// Everything one simulated session produces. Ground truth is kept in a
/// separate channel from the sensor data so the SLAM side can never read
/// it by accident.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub scans: Vec<Scan>,
    pub imu: Vec<ImuSample>,
    /// True sensor pose at every sweep start.
    pub ground_truth: Trajectory,
}

/// Simulates a complete session over `track`: one sweep per lidar period
/// plus the IMU stream. Deterministic for fixed `(world, track, specs, seed)`.
pub fn record_run<T: PoseTrack + ?Sized>(
    world: &WorldModel,
    track: &T,
    lidar: &LidarSpec,
    imu: &ImuSpec,
    seed: u64,
) -> SimRun {
    let period = lidar.sweep_period();
    let duration = track.end_time() - track.start_time();
    let n_sweeps = (duration / period).floor() as usize;

    let scans: Vec<Scan> = runpar::map_range_vec(n_sweeps, |k| {
        let t0 = track.start_time() + k as f64 * period;
        let sweep_seed = seed ^ (k as u64).wrapping_mul(0xa076_1d64_78bd_642f);
        simulate_sweep(world, track, t0, lidar, sweep_seed)
    });

    let mut ground_truth = Trajectory::default();
    for scan in &scans {
        ground_truth.push(scan.start_time, track.pose_at(scan.start_time));
    }

    let imu_samples = simulate_imu(track, imu, seed);
    SimRun {
        scans,
        imu: imu_samples,
        ground_truth,
    }
}

impl SimRun {
    /// Sensor records (scans + IMU) interleaved in time order, plus the
    /// ground-truth poses, as log records.
    pub fn to_log_records(&self) -> Vec<LogRecord> {
        let mut records: Vec<LogRecord> = Vec::new();
        for scan in &self.scans {
            records.push(LogRecord::Scan(scan.clone()));
        }
        for s in &self.imu {
            records.push(LogRecord::Imu(*s));
        }
        for (t, p) in self.ground_truth.samples() {
            records.push(LogRecord::GtPose {
                time: *t,
                pose: *p,
            });
        }
        records.sort_by(|a, b| a.time().total_cmp(&b.time()).then(a.kind().cmp(&b.kind())));
        records
    }
}
