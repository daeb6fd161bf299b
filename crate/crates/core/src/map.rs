//! Global map registration: 20 m cube-indexed storage with per-class
//! voxel downsampling.
//!
//! Scans register their full classified cloud into per-segment voxel
//! accumulators kept in the segment anchor's frame; the published
//! cube-indexed view is derived from the segments on demand. Because the
//! published map is a pure function of segment state, re-posing segments
//! after a loop closure re-voxelizes exactly, and registering the same
//! scan twice at the same pose leaves the published map unchanged.

use crate::cluster::PointAnnotation;
use crate::geom::{Point3, Pose, RangePoint};
use crate::io::PlyPoint;
use nalgebra::Vector3;
use std::collections::HashMap;

/// Class of a registered point. The numeric values match the PLY export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointClass {
    Ground = 0,
    Edge = 1,
    Planar = 2,
    Other = 3,
}

impl PointClass {
    pub const ALL: [PointClass; 4] = [
        PointClass::Ground,
        PointClass::Edge,
        PointClass::Planar,
        PointClass::Other,
    ];

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MapParams {
    /// Cube edge length of the map index, meters.
    pub cube_size: f64,
    /// Voxel leaf for the edge feature map.
    pub edge_leaf: f64,
    /// Voxel leaf for the planar feature map.
    pub planar_leaf: f64,
    /// Voxel leaf for retained non-ground full-cloud points.
    pub full_leaf: f64,
    /// Voxel leaf for retained ground points.
    pub ground_leaf: f64,
    /// Keep the full classified cloud (needed for tree analysis).
    pub retain_full: bool,
    /// Scans per map segment (correction granularity).
    pub segment_scans: usize,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            cube_size: 20.0,
            edge_leaf: 0.1,
            planar_leaf: 0.2,
            full_leaf: 0.03,
            ground_leaf: 0.10,
            retain_full: true,
            segment_scans: 25,
        }
    }
}

/// Voxel accumulator: one `(Σp, n)` cell per occupied voxel.
#[derive(Debug, Clone, Default)]
struct VoxelCloud {
    cells: HashMap<(i64, i64, i64), (Vector3<f64>, u32)>,
    raw_inserts: usize,
}

impl VoxelCloud {
    fn insert(&mut self, p: &Vector3<f64>, leaf: f64) {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let cell = self.cells.entry(key).or_insert((Vector3::zeros(), 0));
        cell.0 += p;
        cell.1 += 1;
        self.raw_inserts += 1;
    }

    /// Centroids in sorted voxel-key order.
    fn centroids(&self) -> Vec<Vector3<f64>> {
        let mut keys: Vec<&(i64, i64, i64)> = self.cells.keys().collect();
        keys.sort_unstable();
        keys.iter()
            .map(|k| {
                let (sum, n) = &self.cells[*k];
                sum / *n as f64
            })
            .collect()
    }

    fn len(&self) -> usize {
        self.cells.len()
    }
}

/// One point per occupied voxel, the arithmetic mean of its members; the
/// grid is anchored at the origin. Output comes in sorted voxel-key order.
pub fn voxel_downsample(points: &[Point3], leaf: f64) -> Vec<Point3> {
    assert!(leaf > 0.0);
    let mut cloud = VoxelCloud::default();
    for p in points {
        cloud.insert(&p.as_vector(), leaf);
    }
    cloud
        .centroids()
        .into_iter()
        .map(Point3::from_vector)
        .collect()
}

/// Scans registered under one trajectory epoch, stored in the anchor
/// scan's frame so a correction re-poses them rigidly.
#[derive(Debug, Clone)]
pub struct MapSegment {
    pub first_scan: usize,
    pub last_scan: usize,
    /// World pose of the anchor (first) scan of this segment.
    pub anchor_pose: Pose,
    clouds: [VoxelCloud; 4],
}

impl MapSegment {
    fn new(scan_id: usize, anchor_pose: Pose) -> Self {
        Self {
            first_scan: scan_id,
            last_scan: scan_id,
            anchor_pose,
            clouds: Default::default(),
        }
    }
}

/// A published cube of the map: per-class voxel clouds in world frame.
#[derive(Debug, Clone, Default)]
struct MapCell {
    clouds: [VoxelCloud; 4],
}

/// Edge and planar points gathered around a query location.
#[derive(Debug, Clone, Default)]
pub struct LocalSubmap {
    pub edges: Vec<Point3>,
    pub planars: Vec<Point3>,
}

#[derive(Debug, Clone)]
pub struct GlobalMap {
    params: MapParams,
    segments: Vec<MapSegment>,
    cubes: HashMap<(i32, i32, i32), MapCell>,
    dirty: bool,
    total_routed: usize,
}

impl GlobalMap {
    pub fn new(params: MapParams) -> Self {
        Self {
            params,
            segments: Vec::new(),
            cubes: HashMap::new(),
            dirty: false,
            total_routed: 0,
        }
    }

    pub fn params(&self) -> &MapParams {
        &self.params
    }

    pub fn segments(&self) -> &[MapSegment] {
        &self.segments
    }

    fn leaf_for(&self, class: PointClass) -> f64 {
        match class {
            PointClass::Ground => self.params.ground_leaf,
            PointClass::Edge => self.params.edge_leaf,
            PointClass::Planar => self.params.planar_leaf,
            PointClass::Other => self.params.full_leaf,
        }
    }

    /// Registers a posed scan's classified points (sensor frame). Returns
    /// how many points were routed into segment storage.
    pub fn register_scan(
        &mut self,
        scan_id: usize,
        pose: &Pose,
        points: &[(Point3, PointClass)],
    ) -> usize {
        let start_new = match self.segments.last() {
            Some(seg) => scan_id >= seg.first_scan + self.params.segment_scans,
            None => true,
        };
        if start_new {
            self.segments.push(MapSegment::new(scan_id, *pose));
        }
        let seg = self.segments.last_mut().unwrap();
        seg.last_scan = seg.last_scan.max(scan_id);
        let to_anchor = seg.anchor_pose.inverse();

        let mut routed = 0usize;
        for (p, class) in points {
            if !self.params.retain_full
                && matches!(class, PointClass::Ground | PointClass::Other)
            {
                continue;
            }
            let world = pose.transform_point(p);
            let local = to_anchor.transform_point(&world);
            let leaf = match class {
                PointClass::Ground => self.params.ground_leaf,
                PointClass::Edge => self.params.edge_leaf,
                PointClass::Planar => self.params.planar_leaf,
                PointClass::Other => self.params.full_leaf,
            };
            seg.clouds[*class as usize].insert(&local.as_vector(), leaf);
            routed += 1;
        }
        self.total_routed += routed;
        self.dirty = true;
        routed
    }

    /// Total raw points accepted into segment storage.
    pub fn routed_points(&self) -> usize {
        self.total_routed
    }

    /// Sum of per-segment raw insert counters; equals
    /// [`Self::routed_points`] since nothing is lost before downsampling.
    pub fn segment_insert_count(&self) -> usize {
        self.segments
            .iter()
            .map(|s| s.clouds.iter().map(|c| c.raw_inserts).sum::<usize>())
            .sum()
    }

    /// Re-poses segments after an optimization round. `pose_of(scan_id)`
    /// supplies the corrected world pose of a segment's anchor scan.
    pub fn apply_corrections(&mut self, pose_of: impl Fn(usize) -> Option<Pose>) {
        for seg in &mut self.segments {
            if let Some(p) = pose_of(seg.first_scan) {
                seg.anchor_pose = p;
            }
        }
        self.dirty = true;
    }

    fn cube_key(&self, p: &Point3) -> (i32, i32, i32) {
        let s = self.params.cube_size;
        (
            (p.x / s).floor() as i32,
            (p.y / s).floor() as i32,
            (p.z / s).floor() as i32,
        )
    }

    /// Rebuilds the published cube view from segment state. Deterministic:
    /// segments in order, classes in order, voxels in key order.
    fn republish(&mut self) {
        if !self.dirty {
            return;
        }
        let mut cubes: HashMap<(i32, i32, i32), MapCell> = HashMap::new();
        for seg in &self.segments {
            for class in PointClass::ALL {
                let leaf = self.leaf_for(class);
                for local in seg.clouds[class as usize].centroids() {
                    let world = seg.anchor_pose.transform_point(&Point3::from_vector(local));
                    let key = {
                        let s = self.params.cube_size;
                        (
                            (world.x / s).floor() as i32,
                            (world.y / s).floor() as i32,
                            (world.z / s).floor() as i32,
                        )
                    };
                    cubes
                        .entry(key)
                        .or_default()
                        .clouds[class as usize]
                        .insert(&world.as_vector(), leaf);
                }
            }
        }
        self.cubes = cubes;
        self.dirty = false;

        #[cfg(debug_assertions)]
        for cell in self.cubes.values() {
            for class in PointClass::ALL {
                let leaf = self.leaf_for(class);
                let bound = (self.params.cube_size / leaf).powi(3).ceil() as usize;
                // straddling rounding can add a sliver of one voxel per axis
                let bound = bound + 3 * (self.params.cube_size / leaf).powi(2).ceil() as usize + 8;
                debug_assert!(
                    cell.clouds[class as usize].len() <= bound,
                    "cube holds more voxels than its volume allows"
                );
            }
        }
    }

    /// All published points with classes, in deterministic order.
    pub fn export_points(&mut self) -> Vec<PlyPoint> {
        self.republish();
        let mut keys: Vec<(i32, i32, i32)> = self.cubes.keys().copied().collect();
        keys.sort_unstable();
        let mut out = Vec::new();
        for key in keys {
            let cell = &self.cubes[&key];
            for class in PointClass::ALL {
                for c in cell.clouds[class as usize].centroids() {
                    out.push(PlyPoint {
                        position: Point3::from_vector(c),
                        class: class.as_u8(),
                    });
                }
            }
        }
        out
    }

    /// Published point count per class.
    pub fn class_counts(&mut self) -> [usize; 4] {
        self.republish();
        let mut counts = [0usize; 4];
        for cell in self.cubes.values() {
            for class in PointClass::ALL {
                counts[class as usize] += cell.clouds[class as usize].len();
            }
        }
        counts
    }

    /// Per-cube manifest rows `(kx, ky, kz, ground, edge, planar, other)`.
    pub fn manifest(&mut self) -> Vec<(i32, i32, i32, usize, usize, usize, usize)> {
        self.republish();
        let mut keys: Vec<(i32, i32, i32)> = self.cubes.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter()
            .map(|k| {
                let c = &self.cubes[&k];
                (
                    k.0,
                    k.1,
                    k.2,
                    c.clouds[0].len(),
                    c.clouds[1].len(),
                    c.clouds[2].len(),
                    c.clouds[3].len(),
                )
            })
            .collect()
    }

    /// Edge/planar points from cubes overlapping the ball, filtered to it.
    pub fn query_submap(&mut self, center: &Point3, radius: f64) -> LocalSubmap {
        self.republish();
        let mut out = LocalSubmap::default();
        if radius <= 0.0 {
            return out;
        }
        let lo = self.cube_key(&Point3::new(
            center.x - radius,
            center.y - radius,
            center.z - radius,
        ));
        let hi = self.cube_key(&Point3::new(
            center.x + radius,
            center.y + radius,
            center.z + radius,
        ));
        for kx in lo.0..=hi.0 {
            for ky in lo.1..=hi.1 {
                for kz in lo.2..=hi.2 {
                    if let Some(cell) = self.cubes.get(&(kx, ky, kz)) {
                        for c in cell.clouds[PointClass::Edge as usize].centroids() {
                            let p = Point3::from_vector(c);
                            if p.distance(center) <= radius {
                                out.edges.push(p);
                            }
                        }
                        for c in cell.clouds[PointClass::Planar as usize].centroids() {
                            let p = Point3::from_vector(c);
                            if p.distance(center) <= radius {
                                out.planars.push(p);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// All published points (any class) within the ball; used as the loop
    /// closure ICP target when full retention is on.
    pub fn query_full_submap(&mut self, center: &Point3, radius: f64) -> Vec<Point3> {
        self.republish();
        let mut out = Vec::new();
        if radius <= 0.0 {
            return out;
        }
        let lo = self.cube_key(&Point3::new(
            center.x - radius,
            center.y - radius,
            center.z - radius,
        ));
        let hi = self.cube_key(&Point3::new(
            center.x + radius,
            center.y + radius,
            center.z + radius,
        ));
        for kx in lo.0..=hi.0 {
            for ky in lo.1..=hi.1 {
                for kz in lo.2..=hi.2 {
                    if let Some(cell) = self.cubes.get(&(kx, ky, kz)) {
                        for class in PointClass::ALL {
                            for c in cell.clouds[class as usize].centroids() {
                                let p = Point3::from_vector(c);
                                if p.distance(center) <= radius {
                                    out.push(p);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Splits a labeled scan into map classes: ground keeps its label,
/// clustered points with a φ value split at the per-scan median (planar
/// at or above the median under the geometric polarity), and everything
/// else retains full-cloud class `Other`.
pub fn classify_points(
    points: &[RangePoint],
    ground: &[bool],
    annotations: &[Option<PointAnnotation>],
    phi: &[Option<f64>],
    polarity_geometric: bool,
) -> Vec<(Point3, PointClass)> {
    assert_eq!(points.len(), ground.len());
    assert_eq!(points.len(), annotations.len());
    assert_eq!(points.len(), phi.len());

    let mut defined: Vec<f64> = phi.iter().flatten().copied().collect();
    let median = if defined.is_empty() {
        f64::INFINITY
    } else {
        defined.sort_by(|a, b| a.total_cmp(b));
        defined[defined.len() / 2]
    };

    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let class = if ground[i] {
                PointClass::Ground
            } else if annotations[i].is_some() {
                match phi[i] {
                    Some(v) => {
                        let planar = v >= median;
                        let planar = if polarity_geometric { planar } else { !planar };
                        if planar {
                            PointClass::Planar
                        } else {
                            PointClass::Edge
                        }
                    }
                    None => PointClass::Other,
                }
            } else {
                PointClass::Other
            };
            (p.position, class)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eight_points_one_voxel_become_their_mean() {
        let pts: Vec<Point3> = (0..8)
            .map(|i| {
                Point3::new(
                    0.02 + 0.01 * (i % 2) as f64,
                    0.05 + 0.01 * ((i / 2) % 2) as f64,
                    0.08 + 0.01 * (i / 4) as f64,
                )
            })
            .collect();
        let out = voxel_downsample(&pts, 0.2);
        assert_eq!(out.len(), 1);
        let mean = Point3::new(
            pts.iter().map(|p| p.x).sum::<f64>() / 8.0,
            pts.iter().map(|p| p.y).sum::<f64>() / 8.0,
            pts.iter().map(|p| p.z).sum::<f64>() / 8.0,
        );
        assert!(out[0].distance(&mean) < 1e-12);
    }

    #[test]
    fn separated_points_pass_through() {
        let pts: Vec<Point3> = (0..10)
            .map(|i| Point3::new(i as f64 * 0.35, 0.05, 0.05))
            .collect();
        let out = voxel_downsample(&pts, 0.3);
        assert_eq!(out.len(), pts.len());
        for p in &pts {
            assert!(out.iter().any(|q| q.distance(p) < 1e-12));
        }
    }

    #[test]
    fn downsample_matches_hash_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..5000)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        let leaf = 0.25;
        let out = voxel_downsample(&pts, leaf);

        // independent brute-force binning
        let mut bins: std::collections::BTreeMap<(i64, i64, i64), Vec<Point3>> =
            std::collections::BTreeMap::new();
        for p in &pts {
            let k = (
                (p.x / leaf).floor() as i64,
                (p.y / leaf).floor() as i64,
                (p.z / leaf).floor() as i64,
            );
            bins.entry(k).or_default().push(*p);
        }
        assert_eq!(out.len(), bins.len());
        for (p, (_, members)) in out.iter().zip(bins.iter()) {
            let n = members.len() as f64;
            let mean = Point3::new(
                members.iter().map(|m| m.x).sum::<f64>() / n,
                members.iter().map(|m| m.y).sum::<f64>() / n,
                members.iter().map(|m| m.z).sum::<f64>() / n,
            );
            assert!(p.distance(&mean) < 1e-12);
        }
    }

    #[test]
    fn downsample_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let once = voxel_downsample(&pts, 0.2);
        let twice = voxel_downsample(&once, 0.2);
        assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            assert!(a.distance(b) < 1e-12);
        }
    }

    fn sample_scan_points(n: usize, seed: u64) -> Vec<(Point3, PointClass)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let class = match i % 4 {
                    0 => PointClass::Ground,
                    1 => PointClass::Edge,
                    2 => PointClass::Planar,
                    _ => PointClass::Other,
                };
                (
                    Point3::new(
                        rng.gen_range(-8.0..8.0),
                        rng.gen_range(-8.0..8.0),
                        rng.gen_range(0.0..3.0),
                    ),
                    class,
                )
            })
            .collect()
    }

    #[test]
    fn first_scan_count_matches_downsampled() {
        let mut map = GlobalMap::new(MapParams::default());
        let pts = sample_scan_points(4000, 5);
        let routed = map.register_scan(0, &Pose::identity(), &pts);
        assert_eq!(routed, 4000);
        assert_eq!(map.routed_points(), map.segment_insert_count());
        let expected: usize = PointClass::ALL
            .iter()
            .map(|&class| {
                let leaf = map.leaf_for(class);
                let subset: Vec<Point3> = pts
                    .iter()
                    .filter(|(_, c)| *c == class)
                    .map(|(p, _)| *p)
                    .collect();
                voxel_downsample(&subset, leaf).len()
            })
            .sum();
        let total: usize = map.class_counts().iter().sum();
        assert_eq!(total, expected);
    }

    #[test]
    fn reregistration_is_idempotent() {
        let mut map = GlobalMap::new(MapParams::default());
        let pts = sample_scan_points(3000, 6);
        map.register_scan(0, &Pose::identity(), &pts);
        let first = map.export_points();
        map.register_scan(0, &Pose::identity(), &pts);
        let second = map.export_points();
        assert_eq!(first.len(), second.len());
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.position.x.to_bits(), b.position.x.to_bits());
            assert_eq!(a.class, b.class);
        }
    }

    #[test]
    fn straddling_scan_splits_across_cubes_without_loss() {
        let mut map = GlobalMap::new(MapParams::default());
        // a line of well-separated edge points across the x = 20 m plane
        let pts: Vec<(Point3, PointClass)> = (0..100)
            .map(|i| (Point3::new(15.0 + i as f64 * 0.11, 0.5, 1.0), PointClass::Edge))
            .collect();
        map.register_scan(0, &Pose::identity(), &pts);
        let manifest = map.manifest();
        assert_eq!(manifest.len(), 2);
        let total_edges: usize = manifest.iter().map(|m| m.5.max(m.4)).sum::<usize>();
        let edge_total: usize = manifest.iter().map(|m| m.4).sum();
        let _ = total_edges;
        assert_eq!(edge_total, 100);
        for m in &manifest {
            assert!(m.0 == 0 || m.0 == 1);
        }
    }

    #[test]
    fn query_submap_matches_brute_force() {
        let mut map = GlobalMap::new(MapParams::default());
        let pts = sample_scan_points(3000, 7);
        map.register_scan(0, &Pose::identity(), &pts);
        let center = Point3::new(1.0, -2.0, 1.0);
        let radius = 4.0;
        let sub = map.query_submap(&center, radius);
        let all = map.export_points();
        let brute_edges: Vec<Point3> = all
            .iter()
            .filter(|p| p.class == PointClass::Edge.as_u8())
            .map(|p| p.position)
            .filter(|p| p.distance(&center) <= radius)
            .collect();
        assert_eq!(sub.edges.len(), brute_edges.len());
        // zero radius and empty regions give empty submaps
        assert!(map.query_submap(&center, 0.0).edges.is_empty());
        let far = map.query_submap(&Point3::new(500.0, 500.0, 0.0), 3.0);
        assert!(far.edges.is_empty() && far.planars.is_empty());
    }

    #[test]
    fn zero_delta_correction_changes_nothing() {
        let mut map = GlobalMap::new(MapParams::default());
        for scan in 0..3usize {
            let pts = sample_scan_points(1000, 8 + scan as u64);
            let pose = Pose::from_translation(scan as f64 * 2.0, 0.0, 0.0);
            map.register_scan(scan, &pose, &pts);
        }
        let before = map.export_points();
        map.apply_corrections(|_| None);
        let after = map.export_points();
        assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.position.x.to_bits(), b.position.x.to_bits());
            assert_eq!(a.position.y.to_bits(), b.position.y.to_bits());
            assert_eq!(a.position.z.to_bits(), b.position.z.to_bits());
        }
    }

    #[test]
    fn segment_translation_shifts_rigidly() {
        let params = MapParams {
            segment_scans: 1,
            ..MapParams::default()
        };
        let mut map = GlobalMap::new(params);
        let pts_a = sample_scan_points(500, 10);
        let pts_b = sample_scan_points(500, 11);
        map.register_scan(0, &Pose::identity(), &pts_a);
        map.register_scan(1, &Pose::from_translation(50.0, 0.0, 0.0), &pts_b);
        let before = map.export_points();

        // shift only the second segment by +1 m z
        map.apply_corrections(|scan| {
            (scan == 1).then(|| Pose::new(
                Vector3::new(50.0, 0.0, 1.0),
                nalgebra::UnitQuaternion::identity(),
            ))
        });
        let after = map.export_points();
        assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after) {
            if a.position.x < 30.0 {
                assert!(a.position.distance(&b.position) < 1e-12, "segment 0 moved");
            } else {
                let dz = b.position.z - a.position.z;
                assert!((dz - 1.0).abs() < 1e-9, "segment 1 shift {dz}");
                assert!((b.position.x - a.position.x).abs() < 1e-9);
            }
        }
    }
}
