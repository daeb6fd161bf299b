//! Lidar ray casting against the synthetic world.
//!
//! Every emitted point is the nearest ray-surface intersection within the
//! maximum range, optionally perturbed by range noise. Columns of a sweep
//! are cast from the instantaneous sensor pose, so a moving sweep carries
//! realistic motion distortion for the de-skew stage to remove.

use super::{ClutterBlob, LidarSpec, Terrain, TreeInstance, WorldModel};
use crate::geom::{Point3, Pose, RangePoint, Scan};
use crate::runpar;
use crate::sim::track::PoseTrack;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

const T_MIN: f64 = 1e-6;

/// Spatial hash over clutter blobs for ray traversal.
#[derive(Debug, Clone, Default)]
pub(crate) struct ClutterGrid {
    cells: HashMap<(i32, i32, i32), Vec<u32>>,
    cell: f64,
}

impl ClutterGrid {
    pub(crate) fn build(blobs: &[ClutterBlob]) -> Self {
        let cell = 4.0;
        let mut cells: HashMap<(i32, i32, i32), Vec<u32>> = HashMap::new();
        for (i, b) in blobs.iter().enumerate() {
            let lo = key(b.center.as_vector() - Vector3::repeat(b.radius), cell);
            let hi = key(b.center.as_vector() + Vector3::repeat(b.radius), cell);
            for kx in lo.0..=hi.0 {
                for ky in lo.1..=hi.1 {
                    for kz in lo.2..=hi.2 {
                        cells.entry((kx, ky, kz)).or_default().push(i as u32);
                    }
                }
            }
        }
        Self { cells, cell }
    }

    /// Nearest blob hit along `o + t d`, `t < t_limit`, via voxel walking.
    fn hit(
        &self,
        blobs: &[ClutterBlob],
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        t_limit: f64,
    ) -> Option<f64> {
        if self.cells.is_empty() {
            return None;
        }
        let mut best: Option<f64> = None;
        let mut k = key(*o, self.cell);
        let step = (sign(d.x), sign(d.y), sign(d.z));
        let mut t_next = [
            boundary_t(o.x, d.x, k.0, self.cell),
            boundary_t(o.y, d.y, k.1, self.cell),
            boundary_t(o.z, d.z, k.2, self.cell),
        ];
        let dt = [
            if d.x != 0.0 { self.cell / d.x.abs() } else { f64::INFINITY },
            if d.y != 0.0 { self.cell / d.y.abs() } else { f64::INFINITY },
            if d.z != 0.0 { self.cell / d.z.abs() } else { f64::INFINITY },
        ];
        let mut t_cell = 0.0;
        loop {
            if let Some(list) = self.cells.get(&k) {
                for &i in list {
                    let b = &blobs[i as usize];
                    if let Some(t) = sphere_hit(&b.center.as_vector(), b.radius, o, d) {
                        if t < best.unwrap_or(t_limit) {
                            best = Some(t);
                        }
                    }
                }
            }
            if best.map_or(false, |b| b <= t_cell) {
                break;
            }
            let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            t_cell = t_next[axis];
            if t_cell > best.unwrap_or(t_limit) {
                break;
            }
            t_next[axis] += dt[axis];
            match axis {
                0 => k.0 += step.0,
                1 => k.1 += step.1,
                _ => k.2 += step.2,
            }
        }
        best.filter(|t| *t < t_limit)
    }
}

fn key(p: Vector3<f64>, cell: f64) -> (i32, i32, i32) {
    (
        (p.x / cell).floor() as i32,
        (p.y / cell).floor() as i32,
        (p.z / cell).floor() as i32,
    )
}

fn sign(v: f64) -> i32 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn boundary_t(o: f64, d: f64, k: i32, cell: f64) -> f64 {
    if d > 0.0 {
        ((k + 1) as f64 * cell - o) / d
    } else if d < 0.0 {
        (k as f64 * cell - o) / d
    } else {
        f64::INFINITY
    }
}

fn sphere_hit(c: &Vector3<f64>, r: f64, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let m = o - c;
    let b = m.dot(d);
    let q = m.dot(&m) - r * r;
    let disc = b * b - q;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > T_MIN).then_some(t)
}

fn terrain_hit(terrain: &Terrain, o: &Vector3<f64>, d: &Vector3<f64>, t_max: f64) -> Option<f64> {
    let c0 = o.z - (terrain.slope_x * o.x + terrain.slope_y * o.y);
    let c1 = d.z - (terrain.slope_x * d.x + terrain.slope_y * d.y);
    let amp = terrain.undulation_bound();
    if amp == 0.0 {
        if c1 >= 0.0 || c0 <= 0.0 {
            return None;
        }
        let t = -c0 / c1;
        return (t > T_MIN && t <= t_max).then_some(t);
    }
    // march the interval where the ray altitude is within the undulation band
    let (mut lo, hi) = if c1 < 0.0 {
        (((amp - c0) / c1).max(0.0), ((-amp - c0) / c1).min(t_max))
    } else if c1 > 0.0 {
        if c0 - amp > 0.0 {
            return None;
        }
        (0.0, ((amp - c0) / c1).min(t_max))
    } else {
        if c0.abs() > amp {
            return None;
        }
        (0.0, t_max)
    };
    if lo >= hi {
        return None;
    }
    let f = |t: f64| {
        let p = o + d * t;
        p.z - terrain.elevation(p.x, p.y)
    };
    let dxy = (d.x * d.x + d.y * d.y).sqrt();
    let step = (terrain.wavelength / (8.0 * dxy.max(1e-9))).clamp(0.05, 1.0);
    let mut fa = f(lo);
    if fa <= 0.0 {
        return None; // started below the surface
    }
    while lo < hi {
        let next = (lo + step).min(hi);
        let fb = f(next);
        if fb <= 0.0 {
            // bisect the bracket
            let (mut a, mut b) = (lo, next);
            for _ in 0..50 {
                let m = 0.5 * (a + b);
                if f(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            let t = 0.5 * (a + b);
            return (t > T_MIN).then_some(t);
        }
        lo = next;
        fa = fb;
    }
    let _ = fa;
    None
}

fn cone_hit(
    tree: &TreeInstance,
    ground_z: f64,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    t_max: f64,
) -> Option<f64> {
    let a_coef = tree.dbh * 0.5 + tree.taper * (1.3 + ground_z);
    let b_coef = tree.taper;
    let r_base = a_coef - b_coef * ground_z;
    // 2D closest-approach prune
    let wx = tree.x - o.x;
    let wy = tree.y - o.y;
    let denom = d.x * d.x + d.y * d.y;
    let w2 = wx * wx + wy * wy;
    let d2 = if denom < 1e-12 {
        w2
    } else {
        let tp = (wx * d.x + wy * d.y) / denom;
        if tp < 0.0 {
            w2
        } else {
            (w2 - tp * tp * denom).max(0.0)
        }
    };
    if d2 > (r_base + 0.01) * (r_base + 0.01) {
        return None;
    }

    let ox = o.x - tree.x;
    let oy = o.y - tree.y;
    let e = a_coef - b_coef * o.z;
    let qa = denom - b_coef * b_coef * d.z * d.z;
    let qb = 2.0 * (ox * d.x + oy * d.y) + 2.0 * e * b_coef * d.z;
    let qc = ox * ox + oy * oy - e * e;
    let (t1, t2) = if qa.abs() < 1e-12 {
        if qb.abs() < 1e-12 {
            return None;
        }
        let t = -qc / qb;
        (t, f64::INFINITY)
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        ((-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa))
    };
    for t in [t1.min(t2), t1.max(t2)] {
        if t > T_MIN && t <= t_max {
            let z = o.z + t * d.z;
            if z >= ground_z && z <= ground_z + tree.height && a_coef - b_coef * z > 0.0 {
                return Some(t);
            }
        }
    }
    None
}

fn block_hit(
    block: &super::BlockObstacle,
    terrain: &Terrain,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    t_max: f64,
) -> Option<f64> {
    let zb = terrain.elevation(block.x, block.y);
    let lo = [block.x - 0.5 * block.size_x, block.y - 0.5 * block.size_y, zb];
    let hi = [
        block.x + 0.5 * block.size_x,
        block.y + 0.5 * block.size_y,
        zb + block.height,
    ];
    let mut t_enter = T_MIN;
    let mut t_exit = t_max;
    let ov = [o.x, o.y, o.z];
    let dv = [d.x, d.y, d.z];
    for i in 0..3 {
        if dv[i].abs() < 1e-12 {
            if ov[i] < lo[i] || ov[i] > hi[i] {
                return None;
            }
        } else {
            let inv = 1.0 / dv[i];
            let (a, b) = ((lo[i] - ov[i]) * inv, (hi[i] - ov[i]) * inv);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            t_enter = t_enter.max(a);
            t_exit = t_exit.min(b);
            if t_enter > t_exit {
                return None;
            }
        }
    }
    (t_enter > T_MIN && t_enter <= t_max).then_some(t_enter)
}

/// Distance to the nearest world surface along a ray, if any within
/// `max_range`. Occlusion is respected across all surface types.
pub fn cast_ray(
    world: &WorldModel,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    max_range: f64,
) -> Option<f64> {
    let mut best = terrain_hit(&world.terrain, origin, dir, max_range);
    let limit = |b: &Option<f64>| b.unwrap_or(max_range);
    for tree in &world.trees {
        let gz = world.terrain.elevation(tree.x, tree.y);
        if let Some(t) = cone_hit(tree, gz, origin, dir, limit(&best)) {
            best = Some(t);
        }
    }
    for block in &world.blocks {
        if let Some(t) = block_hit(block, &world.terrain, origin, dir, limit(&best)) {
            best = Some(t);
        }
    }
    if let Some(t) = world.clutter_grid().hit(&world.clutter, origin, dir, limit(&best)) {
        best = Some(t);
    }
    best
}

fn sweep_impl<F>(world: &WorldModel, pose_at: F, t0: f64, spec: &LidarSpec, seed: u64) -> Scan
where
    F: Fn(f64) -> Pose + Sync,
{
    let period = spec.sweep_period();
    let steps = spec.azimuth_steps as usize;
    let n_rings = spec.n_rings;

    let columns: Vec<Vec<RangePoint>> = runpar::map_range_vec(steps, |col| {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (col as u64)
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(0xd1b5_4a32_d192_ed03),
        );
        let frac = col as f64 / steps as f64;
        let azimuth = frac * spec.horizontal_fov;
        let offset = frac * period;
        let pose = pose_at(t0 + offset);
        let origin = pose.translation;
        let (sin_az, cos_az) = azimuth.sin_cos();
        let mut out = Vec::with_capacity(n_rings as usize);
        for ring in 0..n_rings {
            let elev = spec.ring_elevation(ring);
            let (sin_el, cos_el) = elev.sin_cos();
            let dir_sensor = Vector3::new(cos_el * cos_az, cos_el * sin_az, sin_el);
            let dir_world = pose.rotation * dir_sensor;
            if let Some(t) = cast_ray(world, &origin, &dir_world, spec.max_range) {
                let range = if spec.range_sigma > 0.0 {
                    (t + spec.range_sigma * super::sample_gaussian(&mut rng)).max(0.01)
                } else {
                    t
                };
                out.push(RangePoint {
                    position: Point3::from_vector(dir_sensor * range),
                    range,
                    ring,
                    azimuth,
                    time_offset: offset,
                });
            }
        }
        out
    });

    // regroup column-major hits into ring-major, azimuth-ordered points
    let mut per_ring: Vec<Vec<RangePoint>> = vec![Vec::new(); n_rings as usize];
    for col in &columns {
        for p in col {
            per_ring[p.ring as usize].push(*p);
        }
    }
    let points = per_ring.into_iter().flatten().collect();
    Scan {
        points,
        start_time: t0,
        end_time: t0 + period,
    }
}

/// Simulates one sweep from a fixed pose (no intra-sweep motion).
pub fn simulate_scan(world: &WorldModel, pose: &Pose, spec: &LidarSpec, seed: u64) -> Scan {
    sweep_impl(world, |_| *pose, 0.0, spec, seed)
}

/// Simulates one sweep starting at `t0` with each column emitted from the
/// instantaneous track pose, producing motion-distorted points.
pub fn simulate_sweep<T: PoseTrack + ?Sized>(
    world: &WorldModel,
    track: &T,
    t0: f64,
    spec: &LidarSpec,
    seed: u64,
) -> Scan {
    sweep_impl(world, |t| track.pose_at(t), t0, spec, seed)
}
