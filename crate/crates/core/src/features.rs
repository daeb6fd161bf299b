//! IMU-aided sweep de-skew and edge/planar feature extraction.
//!
//! Orientation comes from gyro integration with a complementary
//! accelerometer correction that keeps roll and pitch aligned with
//! gravity (yaw is unobservable and drifts with the gyro). Each sweep is
//! rotated point-by-point back to its start orientation and shifted by
//! the constant-velocity estimate from the previous sweep.
//!
//! The per-point decision factor is
//! `φ_i = |W| · ‖r_i‖ / Σ_{j∈W} ‖r_i − r_j‖` over a window of consecutive
//! same-ring, same-cluster points, half on each side. As written the
//! factor is large on smooth surfaces and small at discontinuities; the
//! default polarity therefore takes maxima as planar features and minima
//! as edge features, with a switch for the opposite reading.

use crate::geom::{ImuSample, Point3, RangePoint, Scan};
use crate::runpar;
use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("IMU gap of {gap:.3} s exceeds the dead-reckoning limit")]
    DeadReckoningGap { gap: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct FeatureParams {
    /// Neighbor count for φ, split evenly on both sides.
    pub window: usize,
    /// Azimuth sectors per ring for budgeted selection.
    pub sectors: usize,
    pub edge_per_sector: usize,
    pub planar_per_sector: usize,
    /// No two selected features within this many scan indices on a ring.
    pub nms_index_gap: usize,
    /// `true`: max φ → planar, min φ → edge (geometric reading);
    /// `false`: the literal prose polarity (max φ → edge).
    pub polarity_geometric: bool,
    /// Use scalar range differences instead of 3D point distances in φ.
    pub scalar_range_mode: bool,
    /// Complementary filter gain for the gravity correction.
    pub blend_gain: f64,
    /// IMU gap above which tracking reports dead reckoning loss, seconds.
    pub max_imu_gap: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            window: 10,
            sectors: 6,
            edge_per_sector: 2,
            planar_per_sector: 4,
            nms_index_gap: 5,
            polarity_geometric: true,
            scalar_range_mode: false,
            blend_gain: 0.02,
            max_imu_gap: 0.5,
        }
    }
}

/// Time-indexed orientation estimates (world-from-body), sign-continuous.
#[derive(Debug, Clone, Default)]
pub struct OrientationTrack {
    samples: Vec<(f64, UnitQuaternion<f64>)>,
}

impl OrientationTrack {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.samples.first().map(|(t, _)| *t)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.samples.last().map(|(t, _)| *t)
    }

    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        match (self.start_time(), self.end_time()) {
            (Some(a), Some(b)) => a <= t0 + 1e-9 && b >= t1 - 1e-9,
            _ => false,
        }
    }

    /// Orientation at `t`, slerped between samples, clamped outside.
    pub fn orientation_at(&self, t: f64) -> UnitQuaternion<f64> {
        if self.samples.is_empty() {
            return UnitQuaternion::identity();
        }
        let first = self.samples[0];
        if t <= first.0 {
            return first.1;
        }
        let last = self.samples[self.samples.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let idx = self.samples.partition_point(|(st, _)| *st <= t);
        let (t0, q0) = self.samples[idx - 1];
        let (t1, q1) = self.samples[idx];
        q0.slerp(&q1, (t - t0) / (t1 - t0))
    }
}

/// Incremental gyro integrator with gravity-referenced roll/pitch
/// correction.
#[derive(Debug, Clone)]
pub struct OrientationTracker {
    q: UnitQuaternion<f64>,
    last_time: Option<f64>,
    gain: f64,
    max_gap: f64,
    initialized: bool,
    track: OrientationTrack,
}

impl OrientationTracker {
    pub fn new(gain: f64, max_gap: f64) -> Self {
        Self {
            q: UnitQuaternion::identity(),
            last_time: None,
            gain,
            max_gap,
            initialized: false,
            track: OrientationTrack::default(),
        }
    }

    /// Feeds one sample. Integration continues even across a gap, but the
    /// gap is reported.
    pub fn ingest(&mut self, s: &ImuSample) -> Result<(), FeatureError> {
        let mut gap_error = None;
        if let Some(last) = self.last_time {
            let dt = s.time - last;
            if dt > self.max_gap {
                gap_error = Some(FeatureError::DeadReckoningGap { gap: dt });
            }
            if dt > 0.0 {
                self.q = UnitQuaternion::new_normalize(
                    (self.q * UnitQuaternion::from_scaled_axis(s.angular_rate * dt)).into_inner(),
                );
            }
        } else if s.linear_accel.norm() > 1e-6 {
            // first sample: align roll/pitch with gravity, yaw = 0
            let up_body = s.linear_accel.normalize();
            self.q = UnitQuaternion::rotation_between(&up_body, &Vector3::z())
                .unwrap_or_else(UnitQuaternion::identity)
                .inverse();
            self.initialized = true;
        }

        // accelerometer correction only when near 1 g (not maneuvering hard)
        let f_norm = s.linear_accel.norm();
        if self.initialized && (f_norm - 9.81).abs() < 1.0 && f_norm > 1e-6 {
            let up_meas = s.linear_accel / f_norm;
            let up_pred = self.q.inverse() * Vector3::z();
            let correction = self.gain * up_meas.cross(&up_pred);
            self.q = UnitQuaternion::new_normalize(
                (self.q * UnitQuaternion::from_scaled_axis(correction)).into_inner(),
            );
        }
        self.initialized = true;

        // keep the stored quaternion stream sign-continuous
        let mut q_store = self.q;
        if let Some((_, prev)) = self.track.samples.last() {
            if prev.quaternion().coords.dot(&q_store.quaternion().coords) < 0.0 {
                q_store = UnitQuaternion::new_unchecked(-q_store.into_inner());
            }
        }
        self.track.samples.push((s.time, q_store));
        self.last_time = Some(s.time);
        gap_error.map_or(Ok(()), Err)
    }

    pub fn track(&self) -> &OrientationTrack {
        &self.track
    }
}

/// Batch orientation tracking over an IMU stream.
pub fn track_orientation(
    samples: &[ImuSample],
    params: &FeatureParams,
) -> Result<OrientationTrack, FeatureError> {
    let mut tracker = OrientationTracker::new(params.blend_gain, params.max_imu_gap);
    let mut gap: Option<FeatureError> = None;
    for s in samples {
        if let Err(e) = tracker.ingest(s) {
            gap.get_or_insert(e);
        }
    }
    match gap {
        Some(e) => Err(e),
        None => Ok(tracker.track().clone()),
    }
}

/// Rotates every point into the sweep-start orientation and shifts it by
/// the constant-velocity estimate (`velocity` is the start-frame sweep
/// velocity, typically the previous sweep's translation over its period).
/// Missing track coverage passes the scan through with a warning.
pub fn deskew(scan: &Scan, track: &OrientationTrack, velocity: &Vector3<f64>) -> Scan {
    if !track.covers(scan.start_time, scan.end_time) {
        if !track.is_empty() {
            log::warn!(
                "orientation track does not cover sweep [{:.3}, {:.3}]; skipping de-skew",
                scan.start_time,
                scan.end_time
            );
        }
        return scan.clone();
    }
    let q_start = track.orientation_at(scan.start_time);
    let points: Vec<RangePoint> = runpar::map_vec(&scan.points, |p| {
        let q_p = track.orientation_at(scan.start_time + p.time_offset);
        let rotated = (q_start.inverse() * q_p) * p.position.as_vector();
        let corrected = rotated + velocity * p.time_offset;
        RangePoint {
            position: Point3::from_vector(corrected),
            range: corrected.norm(),
            ..*p
        }
    });
    Scan {
        points,
        start_time: scan.start_time,
        end_time: scan.end_time,
    }
}

/// Per-point decision factor φ over same-ring, same-cluster windows.
/// `None` marks points without a full window or with coincident neighbors
/// (excluded from feature selection).
pub fn smoothness(
    scan: &Scan,
    cluster_ids: &[Option<u32>],
    params: &FeatureParams,
) -> Vec<Option<f64>> {
    assert_eq!(scan.points.len(), cluster_ids.len());
    let half = (params.window / 2).max(1);

    // scan order is ring-grouped; find each ring's contiguous span
    let mut ring_spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0usize;
    for i in 1..=scan.points.len() {
        if i == scan.points.len() || scan.points[i].ring != scan.points[start].ring {
            ring_spans.push((start, i));
            start = i;
        }
    }

    let mut phi = vec![None; scan.points.len()];
    let span_results: Vec<Vec<(usize, f64)>> = runpar::map_vec(&ring_spans, |&(lo, hi)| {
        let mut out = Vec::new();
        // per-cluster subsequences in azimuth order
        let mut by_cluster: std::collections::BTreeMap<u32, Vec<usize>> =
            std::collections::BTreeMap::new();
        for i in lo..hi {
            if let Some(c) = cluster_ids[i] {
                by_cluster.entry(c).or_default().push(i);
            }
        }
        for (_, seq) in by_cluster {
            if seq.len() < params.window + 1 {
                continue;
            }
            for pos in half..seq.len() - half {
                let i = seq[pos];
                let pi = &scan.points[i];
                let mut denom = 0.0;
                for d in 1..=half {
                    for j in [seq[pos - d], seq[pos + d]] {
                        let pj = &scan.points[j];
                        denom += if params.scalar_range_mode {
                            (pi.range - pj.range).abs()
                        } else {
                            pi.position.distance(&pj.position)
                        };
                    }
                }
                if denom > 0.0 {
                    out.push(((i), (2 * half) as f64 * pi.range / denom));
                }
            }
        }
        out
    });
    for span in span_results {
        for (i, v) in span {
            phi[i] = Some(v);
        }
    }
    phi
}

#[derive(Debug, Clone, Copy)]
pub struct FeaturePoint {
    /// Position in the de-skewed sensor frame.
    pub position: Point3,
    pub phi: f64,
    /// Index into the source scan.
    pub index: usize,
}

/// Edge and planar features of one sweep; the classes are disjoint.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    pub edges: Vec<FeaturePoint>,
    pub planars: Vec<FeaturePoint>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.edges.len() + self.planars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.planars.is_empty()
    }
}

/// Budgeted selection per ring and azimuth sector with index-gap
/// non-maximum suppression. Only points with a φ value participate, so
/// every feature is clustered and non-ground by construction.
pub fn select_features(scan: &Scan, phi: &[Option<f64>], params: &FeatureParams) -> FeatureSet {
    assert_eq!(scan.points.len(), phi.len());
    let sector_width = std::f64::consts::TAU / params.sectors.max(1) as f64;

    // bucket candidate indices by (ring, sector)
    let mut buckets: std::collections::BTreeMap<(u16, usize), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, p) in scan.points.iter().enumerate() {
        if phi[i].is_some() {
            let sector = ((p.azimuth / sector_width) as usize).min(params.sectors - 1);
            buckets.entry((p.ring, sector)).or_default().push(i);
        }
    }

    let mut set = FeatureSet::default();
    for (_, mut candidates) in buckets {
        // ascending φ, index ties stable
        candidates.sort_by(|&a, &b| {
            phi[a]
                .unwrap()
                .total_cmp(&phi[b].unwrap())
                .then(a.cmp(&b))
        });
        let (min_end, max_end): (&mut Vec<FeaturePoint>, &mut Vec<FeaturePoint>) =
            if params.polarity_geometric {
                (&mut set.edges, &mut set.planars)
            } else {
                (&mut set.planars, &mut set.edges)
            };
        let min_budget = if params.polarity_geometric {
            params.edge_per_sector
        } else {
            params.planar_per_sector
        };
        let max_budget = if params.polarity_geometric {
            params.planar_per_sector
        } else {
            params.edge_per_sector
        };

        let mut used: Vec<usize> = Vec::new();
        let gap = params.nms_index_gap;
        let take = |order: &[usize], budget: usize, out: &mut Vec<FeaturePoint>,
                        used: &mut Vec<usize>| {
            let mut taken = 0;
            for &i in order {
                if taken >= budget {
                    break;
                }
                if used.iter().any(|&u| u.abs_diff(i) < gap) {
                    continue;
                }
                out.push(FeaturePoint {
                    position: scan.points[i].position,
                    phi: phi[i].unwrap(),
                    index: i,
                });
                used.push(i);
                taken += 1;
            }
        };
        take(&candidates, min_budget, min_end, &mut used);
        let descending: Vec<usize> = candidates.iter().rev().copied().collect();
        take(&descending, max_budget, max_end, &mut used);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn imu_at(t: f64, gyro: [f64; 3], accel: [f64; 3]) -> ImuSample {
        ImuSample {
            time: t,
            angular_rate: Vector3::new(gyro[0], gyro[1], gyro[2]),
            linear_accel: Vector3::new(accel[0], accel[1], accel[2]),
        }
    }

    #[test]
    fn stationary_track_is_constant() {
        let samples: Vec<ImuSample> = (0..100)
            .map(|k| imu_at(k as f64 * 0.01, [0.0; 3], [0.0, 0.0, 9.81]))
            .collect();
        let track = track_orientation(&samples, &FeatureParams::default()).unwrap();
        assert!(track.orientation_at(0.5).angle() < 1e-9);
    }

    #[test]
    fn constant_yaw_rate_integrates_exactly() {
        let samples: Vec<ImuSample> = (0..=1000)
            .map(|k| imu_at(k as f64 * 0.01, [0.0, 0.0, 0.1], [0.0, 0.0, 9.81]))
            .collect();
        let track = track_orientation(&samples, &FeatureParams::default()).unwrap();
        let q = track.orientation_at(10.0);
        let (_, _, yaw) = q.euler_angles();
        assert!((yaw - 1.0).abs() < 1e-4, "yaw {yaw}");
    }

    #[test]
    fn gyro_bias_drifts_yaw_but_not_tilt() {
        // constant z-bias plus a small x-bias; gravity holds roll/pitch
        let samples: Vec<ImuSample> = (0..=2000)
            .map(|k| imu_at(k as f64 * 0.01, [0.005, 0.0, 0.01], [0.0, 0.0, 9.81]))
            .collect();
        let track = track_orientation(&samples, &FeatureParams::default()).unwrap();
        let q = track.orientation_at(20.0);
        let (roll, pitch, yaw) = q.euler_angles();
        assert!(yaw.abs() > 0.15, "yaw should drift, got {yaw}");
        assert!(roll.abs() < 0.05, "roll bounded by correction: {roll}");
        assert!(pitch.abs() < 0.05, "pitch bounded by correction: {pitch}");
    }

    #[test]
    fn imu_gap_is_reported() {
        let samples = vec![
            imu_at(0.0, [0.0; 3], [0.0, 0.0, 9.81]),
            imu_at(1.0, [0.0; 3], [0.0, 0.0, 9.81]),
        ];
        assert!(matches!(
            track_orientation(&samples, &FeatureParams::default()),
            Err(FeatureError::DeadReckoningGap { .. })
        ));
    }

    fn line_scan() -> Scan {
        // straight line through (10, 0, 0) along y, spacing 0.05 m, one ring
        let points: Vec<RangePoint> = (-8..=8)
            .map(|k| {
                let pos = Point3::new(10.0, k as f64 * 0.05, 0.0);
                RangePoint {
                    position: pos,
                    range: pos.norm(),
                    ring: 0,
                    azimuth: (k as f64 * 0.005 + 1.0).rem_euclid(std::f64::consts::TAU),
                    time_offset: (k + 8) as f64 * 1e-4,
                }
            })
            .collect();
        Scan {
            points,
            start_time: 0.0,
            end_time: 0.2,
        }
    }

    #[test]
    fn phi_matches_hand_computation() {
        let scan = line_scan();
        let ids = vec![Some(0u32); scan.points.len()];
        let phi = smoothness(&scan, &ids, &FeatureParams::default());
        // center point: range exactly 10, neighbors at ±0.05..±0.25
        let center = 8usize;
        let expected = 10.0 * 10.0 / (2.0 * (0.05 + 0.10 + 0.15 + 0.20 + 0.25));
        assert_relative_eq!(phi[center].unwrap(), expected, epsilon = 1e-9);
        assert_relative_eq!(phi[center].unwrap(), 200.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn depth_discontinuity_lowers_phi() {
        let mut scan = line_scan();
        let smooth_phi = {
            let ids = vec![Some(0u32); scan.points.len()];
            smoothness(&scan, &ids, &FeatureParams::default())[8].unwrap()
        };
        // push one in-window neighbor 5 m deeper
        let p = &mut scan.points[11];
        p.position = Point3::new(15.0, p.position.y, 0.0);
        p.range = p.position.norm();
        let ids = vec![Some(0u32); scan.points.len()];
        let disc_phi = smoothness(&scan, &ids, &FeatureParams::default())[8].unwrap();
        assert!(disc_phi < smooth_phi * 0.4, "{disc_phi} vs {smooth_phi}");
    }

    #[test]
    fn coincident_neighbors_are_excluded() {
        let mut scan = line_scan();
        for p in scan.points.iter_mut() {
            p.position = Point3::new(10.0, 0.0, 0.0);
            p.range = 10.0;
        }
        let ids = vec![Some(0u32); scan.points.len()];
        let phi = smoothness(&scan, &ids, &FeatureParams::default());
        assert!(phi.iter().all(|p| p.is_none()));
    }

    #[test]
    fn phi_is_scale_invariant() {
        let scan = line_scan();
        let ids = vec![Some(0u32); scan.points.len()];
        let phi1 = smoothness(&scan, &ids, &FeatureParams::default());
        let scaled = Scan {
            points: scan
                .points
                .iter()
                .map(|p| {
                    let pos = Point3::new(p.position.x * 3.0, p.position.y * 3.0, p.position.z * 3.0);
                    RangePoint {
                        position: pos,
                        range: pos.norm(),
                        ..*p
                    }
                })
                .collect(),
            ..scan
        };
        let phi3 = smoothness(&scaled, &ids, &FeatureParams::default());
        for (a, b) in phi1.iter().zip(&phi3) {
            match (a, b) {
                (Some(x), Some(y)) => assert_relative_eq!(x, y, epsilon = 1e-9),
                (None, None) => {}
                _ => panic!("scale changed the exclusion pattern"),
            }
        }
    }

    #[test]
    fn deskew_stationary_is_identity() {
        let scan = line_scan();
        let samples: Vec<ImuSample> = (0..40)
            .map(|k| imu_at(k as f64 * 0.01, [0.0; 3], [0.0, 0.0, 9.81]))
            .collect();
        let track = track_orientation(&samples, &FeatureParams::default()).unwrap();
        let out = deskew(&scan, &track, &Vector3::zeros());
        for (a, b) in scan.points.iter().zip(&out.points) {
            assert!(a.position.distance(&b.position) < 1e-12);
        }
    }

    #[test]
    fn deskew_shifts_by_velocity_fraction() {
        let mut scan = line_scan();
        scan.points[8].time_offset = 0.1; // half the 0.2 s sweep
        let samples: Vec<ImuSample> = (0..40)
            .map(|k| imu_at(k as f64 * 0.01, [0.0; 3], [0.0, 0.0, 9.81]))
            .collect();
        let track = track_orientation(&samples, &FeatureParams::default()).unwrap();
        let v = Vector3::new(1.0, 0.0, 0.0); // 1 m/s forward
        let out = deskew(&scan, &track, &v);
        let moved = out.points[8].position.as_vector() - scan.points[8].position.as_vector();
        assert!((moved - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn selection_respects_budgets_and_disjointness() {
        // two rings with plenty of candidates across sectors
        let mut points = Vec::new();
        for ring in 0..2u16 {
            for i in 0..720 {
                let az = std::f64::consts::TAU * i as f64 / 720.0;
                let r = 8.0 + 0.02 * ((i % 13) as f64);
                let pos = Point3::new(r * az.cos(), r * az.sin(), ring as f64 * 0.2);
                points.push(RangePoint {
                    position: pos,
                    range: pos.norm(),
                    ring,
                    azimuth: az,
                    time_offset: i as f64 * 1e-4,
                });
            }
        }
        let scan = Scan {
            points,
            start_time: 0.0,
            end_time: 0.2,
        };
        let ids = vec![Some(0u32); scan.points.len()];
        let params = FeatureParams::default();
        let phi = smoothness(&scan, &ids, &params);
        let set = select_features(&scan, &phi, &params);

        assert!(!set.is_empty());
        let edge_idx: std::collections::HashSet<usize> =
            set.edges.iter().map(|f| f.index).collect();
        let planar_idx: std::collections::HashSet<usize> =
            set.planars.iter().map(|f| f.index).collect();
        assert!(edge_idx.is_disjoint(&planar_idx));

        // per ring-sector counts within budget
        let mut counts: std::collections::HashMap<(u16, usize), (usize, usize)> =
            std::collections::HashMap::new();
        let sector_w = std::f64::consts::TAU / params.sectors as f64;
        for f in &set.edges {
            let p = &scan.points[f.index];
            let e = counts
                .entry((p.ring, (p.azimuth / sector_w) as usize))
                .or_default();
            e.0 += 1;
        }
        for f in &set.planars {
            let p = &scan.points[f.index];
            let e = counts
                .entry((p.ring, (p.azimuth / sector_w) as usize))
                .or_default();
            e.1 += 1;
        }
        for ((_, _), (e, pl)) in counts {
            assert!(e <= params.edge_per_sector);
            assert!(pl <= params.planar_per_sector);
        }

        // deterministic
        let set2 = select_features(&scan, &phi, &params);
        assert_eq!(set.edges.len(), set2.edges.len());
        for (a, b) in set.edges.iter().zip(&set2.edges) {
            assert_eq!(a.index, b.index);
        }
    }

    #[test]
    fn empty_clusters_give_empty_features() {
        let scan = line_scan();
        let ids = vec![None; scan.points.len()];
        let params = FeatureParams::default();
        let phi = smoothness(&scan, &ids, &params);
        let set = select_features(&scan, &phi, &params);
        assert!(set.is_empty());
    }
}
