//! Continuous sensor trajectories.
//!
//! [`SplineTrack`] follows 2D waypoints with a Catmull-Rom spline at a
//! smoothly ramped speed, keeping the sensor a fixed height above the
//! terrain with the heading along the path tangent. The track is C¹ in
//! time, which is what the IMU synthesizer differentiates.

use super::terrain::Terrain;
use super::SimError;
use crate::geom::{Pose, Trajectory};
use nalgebra::{UnitQuaternion, Vector2, Vector3};

/// A continuous, twice-differentiable-between-knots pose source.
pub trait PoseTrack: Sync {
    fn pose_at(&self, t: f64) -> Pose;
    fn start_time(&self) -> f64;
    fn end_time(&self) -> f64;

    /// Ground-truth trajectory sampled at a fixed interval.
    fn sample_trajectory(&self, interval: f64) -> Trajectory {
        let mut traj = Trajectory::default();
        let mut t = self.start_time();
        while t <= self.end_time() + 1e-9 {
            traj.push(t, self.pose_at(t));
            t += interval;
        }
        traj
    }
}

/// Time-parameterized Catmull-Rom path over terrain.
pub struct SplineTrack {
    terrain: Terrain,
    mount_height: f64,
    points: Vec<Vector2<f64>>,
    closed: bool,
    /// `(u, du/dt)` samples on a uniform time grid of step `dt`.
    time_table: Vec<(f64, f64)>,
    dt: f64,
    t_end: f64,
    fixed_yaw: Option<f64>,
}

const RAMP_SECONDS: f64 = 2.0;
const TABLE_DT: f64 = 2e-3;

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl SplineTrack {
    /// A stationary track holding one pose forever (well, for `duration`).
    pub fn stationary(terrain: Terrain, x: f64, y: f64, mount_height: f64, duration: f64) -> Self {
        Self {
            terrain,
            mount_height,
            points: vec![Vector2::new(x, y)],
            closed: false,
            time_table: Vec::new(),
            dt: TABLE_DT,
            t_end: duration,
            fixed_yaw: Some(0.0),
        }
    }

    fn n_segments(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    fn control(&self, i: isize) -> Vector2<f64> {
        let n = self.points.len() as isize;
        if self.closed {
            // last point duplicates the first; wrap over n-1 distinct points
            let m = n - 1;
            let idx = ((i % m) + m) % m;
            self.points[idx as usize]
        } else {
            self.points[i.clamp(0, n - 1) as usize]
        }
    }

    /// Position and derivative w.r.t. the spline parameter `u`.
    fn eval_xy(&self, u: f64) -> (Vector2<f64>, Vector2<f64>) {
        let n_seg = self.n_segments();
        if n_seg == 0 {
            return (self.points[0], Vector2::zeros());
        }
        let u = u.clamp(0.0, n_seg as f64);
        let seg = (u.floor() as usize).min(n_seg - 1);
        let s = u - seg as f64;
        let i = seg as isize;
        let p0 = self.control(i);
        let p1 = self.control(i + 1);
        let m0 = 0.5 * (self.control(i + 1) - self.control(i - 1));
        let m1 = 0.5 * (self.control(i + 2) - self.control(i));
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let pos = p0 * h00 + m0 * h10 + p1 * h01 + m1 * h11;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        let deriv = p0 * d00 + m0 * d10 + p1 * d01 + m1 * d11;
        (pos, deriv)
    }

    fn u_at(&self, t: f64) -> f64 {
        if self.time_table.is_empty() {
            return 0.0;
        }
        let t = t.clamp(0.0, self.t_end);
        let k = ((t / self.dt).floor() as usize).min(self.time_table.len() - 2);
        let (u0, v0) = self.time_table[k];
        let (u1, v1) = self.time_table[k + 1];
        let s = (t - k as f64 * self.dt) / self.dt;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (h00 * u0 + h10 * self.dt * v0 + h01 * u1 + h11 * self.dt * v1).clamp(0.0, self.n_segments() as f64)
    }

    pub fn duration(&self) -> f64 {
        self.t_end
    }
}

impl PoseTrack for SplineTrack {
    fn pose_at(&self, t: f64) -> Pose {
        let u = self.u_at(t);
        let (xy, deriv) = self.eval_xy(u);
        let z = self.terrain.elevation(xy.x, xy.y) + self.mount_height;
        let yaw = match self.fixed_yaw {
            Some(y) => y,
            None => {
                if deriv.norm() > 1e-9 {
                    deriv.y.atan2(deriv.x)
                } else {
                    0.0
                }
            }
        };
        Pose::new(
            Vector3::new(xy.x, xy.y, z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        )
    }

    fn start_time(&self) -> f64 {
        0.0
    }

    fn end_time(&self) -> f64 {
        self.t_end
    }
}

/// Builds a C¹ track through `waypoints` at `speed` (m/s), ramping up from
/// rest over the first two seconds. A single waypoint yields a stationary
/// track; a waypoint list returning to its start closes the loop smoothly.
pub fn generate_trajectory(
    terrain: Terrain,
    waypoints: &[[f64; 2]],
    speed: f64,
    mount_height: f64,
) -> Result<SplineTrack, SimError> {
    if waypoints.is_empty() {
        return Err(SimError::EmptyWaypoints);
    }
    if waypoints.len() == 1 {
        return Ok(SplineTrack::stationary(
            terrain,
            waypoints[0][0],
            waypoints[0][1],
            mount_height,
            10.0,
        ));
    }
    let points: Vec<Vector2<f64>> = waypoints.iter().map(|w| Vector2::new(w[0], w[1])).collect();
    let closed = (points[0] - points[points.len() - 1]).norm() < 1e-9 && points.len() > 2;

    let mut track = SplineTrack {
        terrain,
        mount_height,
        points,
        closed,
        time_table: Vec::new(),
        dt: TABLE_DT,
        t_end: 0.0,
        fixed_yaw: None,
    };

    // Integrate du/dt = speed(t) / |dP/du| with RK4 until the path ends.
    let u_max = track.n_segments() as f64;
    let speed_at = |t: f64| speed * smoothstep(t / RAMP_SECONDS);
    let slope = |track: &SplineTrack, u: f64, t: f64| -> f64 {
        let (_, deriv) = track.eval_xy(u);
        let n = deriv.norm();
        if n < 1e-9 {
            0.0
        } else {
            speed_at(t) / n
        }
    };
    let dt = TABLE_DT;
    let mut u = 0.0;
    let mut t = 0.0;
    let mut table = vec![(0.0, slope(&track, 0.0, 0.0))];
    while u < u_max {
        let k1 = slope(&track, u, t);
        let k2 = slope(&track, u + 0.5 * dt * k1, t + 0.5 * dt);
        let k3 = slope(&track, u + 0.5 * dt * k2, t + 0.5 * dt);
        let k4 = slope(&track, u + dt * k3, t + dt);
        u += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += dt;
        u = u.min(u_max);
        table.push((u, slope(&track, u, t)));
        if table.len() > 50_000_000 {
            break; // zero speed would never terminate
        }
    }
    track.time_table = table;
    track.t_end = t;
    Ok(track)
}
