//! Deterministic synthetic-world generator and sensor simulator.
//!
//! Replaces field recordings for testing: it produces ground-truthed scan
//! and IMU logs over procedurally generated forest stands. Everything is a
//! pure function of `(parameters, seed)`, so identical inputs yield
//! bit-identical logs.

mod imu;
mod lidar;
mod record;
mod terrain;
mod track;

pub use imu::simulate_imu;
pub use lidar::{cast_ray, simulate_scan, simulate_sweep};
pub use record::{record_run, SimRun};
pub use terrain::Terrain;
pub use track::{generate_trajectory, PoseTrack, SplineTrack};

use crate::geom::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("could not place {placed} of {requested} trees with spacing {spacing} m in the region")]
    SpacingInfeasible {
        requested: usize,
        placed: usize,
        spacing: f64,
    },
    #[error("trajectory needs at least one waypoint")]
    EmptyWaypoints,
}

/// A single tree stem: a vertical truncated cone.
///
/// `dbh` is the diameter at breast height (1.3 m above local ground);
/// `taper` is the radius decrease per meter of height, so the radius at
/// height `h` above ground is `dbh/2 + taper * (1.3 - h)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TreeInstance {
    pub x: f64,
    pub y: f64,
    pub dbh: f64,
    pub height: f64,
    pub taper: f64,
}

impl TreeInstance {
    pub fn radius_at(&self, height_above_ground: f64) -> f64 {
        self.dbh * 0.5 + self.taper * (1.3 - height_above_ground)
    }
}

/// An axis-aligned rectangular obstacle standing on the terrain (boulder,
/// shed wall, parked trailer — the man-made clutter around a stand).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlockObstacle {
    pub x: f64,
    pub y: f64,
    pub size_x: f64,
    pub size_y: f64,
    pub height: f64,
}

/// A small spherical clutter element (canopy foliage).
#[derive(Debug, Clone, Copy)]
pub struct ClutterBlob {
    pub center: Point3,
    pub radius: f64,
}

/// The synthetic world: terrain, tree stems, canopy clutter and optional
/// block obstacles.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub terrain: Terrain,
    pub trees: Vec<TreeInstance>,
    pub clutter: Vec<ClutterBlob>,
    pub blocks: Vec<BlockObstacle>,
    /// Clutter density the world was generated with, points/m³.
    pub clutter_density: f64,
    clutter_grid: lidar::ClutterGrid,
}

impl WorldModel {
    pub fn new(
        terrain: Terrain,
        trees: Vec<TreeInstance>,
        clutter: Vec<ClutterBlob>,
        blocks: Vec<BlockObstacle>,
        clutter_density: f64,
    ) -> Self {
        debug_assert!(trees.iter().all(|t| t.dbh > 0.0 && t.height > 1.4));
        let clutter_grid = lidar::ClutterGrid::build(&clutter);
        Self {
            terrain,
            trees,
            clutter,
            blocks,
            clutter_density,
            clutter_grid,
        }
    }

    pub(crate) fn clutter_grid(&self) -> &lidar::ClutterGrid {
        &self.clutter_grid
    }
}

/// Lidar sensor model. Defaults mirror a 16-ring spinning lidar with a
/// 360°×30° field of view sweeping at 5 Hz with 100 m range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    pub n_rings: u16,
    /// Horizontal field of view, radians (2π = full sweep).
    pub horizontal_fov: f64,
    /// Lowest beam elevation, radians.
    pub vertical_min: f64,
    /// Highest beam elevation, radians.
    pub vertical_max: f64,
    /// Sweeps per second.
    pub sweep_rate: f64,
    pub max_range: f64,
    /// Azimuth steps per sweep; points per sweep = `n_rings * azimuth_steps`.
    pub azimuth_steps: u32,
    /// Range noise standard deviation, meters.
    pub range_sigma: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            n_rings: 16,
            horizontal_fov: std::f64::consts::TAU,
            vertical_min: -15f64.to_radians(),
            vertical_max: 15f64.to_radians(),
            sweep_rate: 5.0,
            max_range: 100.0,
            azimuth_steps: 3600,
            range_sigma: 0.0,
        }
    }
}

impl LidarSpec {
    pub fn sweep_period(&self) -> f64 {
        1.0 / self.sweep_rate
    }

    /// Elevation of beam `ring`, evenly spaced over the vertical FOV.
    pub fn ring_elevation(&self, ring: u16) -> f64 {
        if self.n_rings <= 1 {
            return 0.5 * (self.vertical_min + self.vertical_max);
        }
        let s = ring as f64 / (self.n_rings - 1) as f64;
        self.vertical_min + s * (self.vertical_max - self.vertical_min)
    }
}

/// Inertial sensor model. The paper names the IMU but gives no noise
/// figures; the defaults are chosen to make dead-reckoning drift visible
/// at desk scale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSpec {
    pub rate: f64,
    /// Gyro white-noise density, rad/s/√Hz.
    pub gyro_noise_density: f64,
    /// Constant gyro bias per axis, rad/s.
    pub gyro_bias: [f64; 3],
    /// Gyro bias random-walk density, rad/s²/√Hz.
    pub gyro_bias_walk: f64,
    /// Accelerometer white-noise density, m/s²/√Hz.
    pub accel_noise_density: f64,
}

impl Default for ImuSpec {
    fn default() -> Self {
        Self {
            rate: 100.0,
            gyro_noise_density: 0.005,
            gyro_bias: [0.0; 3],
            gyro_bias_walk: 0.0,
            accel_noise_density: 0.05,
        }
    }
}

impl ImuSpec {
    pub fn noiseless() -> Self {
        Self {
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            gyro_bias: [0.0; 3],
            gyro_bias_walk: 0.0,
            ..Self::default()
        }
    }
}

/// Parameters for procedural stand generation; serializable as the
/// `[world]` section of a stand TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StandTemplate {
    /// Tree placement region `[xmin, ymin, xmax, ymax]`, meters.
    pub region: [f64; 4],
    pub n_trees: usize,
    /// Minimum center-to-center tree spacing, meters.
    pub min_spacing: f64,
    pub dbh_mean_cm: f64,
    pub dbh_std_cm: f64,
    pub dbh_min_cm: f64,
    pub dbh_max_cm: f64,
    pub height_min: f64,
    pub height_max: f64,
    /// Trunk radius decrease per meter of height.
    pub taper: f64,
    /// Canopy clutter density, points/m³.
    pub clutter_density: f64,
    /// Vertical extent of the clutter layer above local ground.
    pub clutter_z: [f64; 2],
    pub clutter_radius: f64,
    pub terrain: Terrain,
    pub blocks: Vec<BlockObstacle>,
    /// Trees placed explicitly instead of sampled (positions in meters,
    /// DBH in cm); sampled trees keep their spacing from these as well.
    pub fixed_trees: Vec<FixedTree>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FixedTree {
    pub x: f64,
    pub y: f64,
    pub dbh_cm: f64,
}

impl Default for StandTemplate {
    fn default() -> Self {
        Self {
            region: [-15.0, -15.0, 15.0, 15.0],
            n_trees: 23,
            min_spacing: 2.5,
            dbh_mean_cm: 41.35,
            dbh_std_cm: 9.91,
            dbh_min_cm: 20.59,
            dbh_max_cm: 58.82,
            height_min: 6.0,
            height_max: 12.0,
            taper: 0.006,
            clutter_density: 0.05,
            clutter_z: [3.0, 9.0],
            clutter_radius: 0.04,
            terrain: Terrain::flat(),
            blocks: Vec::new(),
            fixed_trees: Vec::new(),
        }
    }
}

pub(crate) fn sample_gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout obvious.
    loop {
        let u1: f64 = rng.gen();
        if u1 > f64::EPSILON {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Generates a forest stand deterministically from `seed`.
///
/// Tree centers are rejection-sampled to honor `min_spacing`; DBH values
/// are drawn from a clamped normal. Fails with
/// [`SimError::SpacingInfeasible`] when the requested density does not fit.
pub fn generate_world(seed: u64, template: &StandTemplate) -> Result<WorldModel, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [xmin, ymin, xmax, ymax] = template.region;

    let mut trees: Vec<TreeInstance> = template
        .fixed_trees
        .iter()
        .map(|f| TreeInstance {
            x: f.x,
            y: f.y,
            dbh: f.dbh_cm / 100.0,
            height: 0.5 * (template.height_min + template.height_max),
            taper: template.taper,
        })
        .collect();

    let mut attempts = 0usize;
    let max_attempts = 1000 * template.n_trees.max(1);
    while trees.len() < template.n_trees + template.fixed_trees.len() {
        if attempts >= max_attempts {
            return Err(SimError::SpacingInfeasible {
                requested: template.n_trees,
                placed: trees.len() - template.fixed_trees.len(),
                spacing: template.min_spacing,
            });
        }
        attempts += 1;
        let x = rng.gen_range(xmin..xmax);
        let y = rng.gen_range(ymin..ymax);
        if trees
            .iter()
            .any(|t| (t.x - x).hypot(t.y - y) < template.min_spacing)
        {
            continue;
        }
        let dbh_cm = loop {
            let d = template.dbh_mean_cm + template.dbh_std_cm * sample_gaussian(&mut rng);
            if d >= template.dbh_min_cm && d <= template.dbh_max_cm {
                break d;
            }
        };
        let height = rng.gen_range(template.height_min..template.height_max);
        trees.push(TreeInstance {
            x,
            y,
            dbh: dbh_cm / 100.0,
            height,
            taper: template.taper,
        });
    }

    let mut clutter_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let [z_lo, z_hi] = template.clutter_z;
    let volume = (xmax - xmin) * (ymax - ymin) * (z_hi - z_lo).max(0.0);
    let count = (template.clutter_density * volume).round() as usize;
    let clutter: Vec<ClutterBlob> = (0..count)
        .map(|_| {
            let x = clutter_rng.gen_range(xmin..xmax);
            let y = clutter_rng.gen_range(ymin..ymax);
            let dz = clutter_rng.gen_range(z_lo..z_hi);
            let z = template.terrain.elevation(x, y) + dz;
            ClutterBlob {
                center: Point3::new(x, y, z),
                radius: template.clutter_radius,
            }
        })
        .collect();

    Ok(WorldModel::new(
        template.terrain,
        trees,
        clutter,
        template.blocks.clone(),
        template.clutter_density,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stand_generation_places_all_trees() {
        let template = StandTemplate::default();
        let world = generate_world(1, &template).unwrap();
        assert_eq!(world.trees.len(), 23);
        for (i, a) in world.trees.iter().enumerate() {
            assert!(a.dbh >= 0.2059 && a.dbh <= 0.5882);
            for b in &world.trees[i + 1..] {
                assert!((a.x - b.x).hypot(a.y - b.y) >= 2.5);
            }
        }
    }

    #[test]
    fn zero_trees_gives_bare_terrain() {
        let template = StandTemplate {
            n_trees: 0,
            clutter_density: 0.0,
            ..StandTemplate::default()
        };
        let world = generate_world(7, &template).unwrap();
        assert!(world.trees.is_empty());
        assert!(world.clutter.is_empty());
    }

    #[test]
    fn same_seed_same_world() {
        let template = StandTemplate::default();
        let a = generate_world(42, &template).unwrap();
        let b = generate_world(42, &template).unwrap();
        assert_eq!(a.trees.len(), b.trees.len());
        for (ta, tb) in a.trees.iter().zip(&b.trees) {
            assert_eq!(ta.x.to_bits(), tb.x.to_bits());
            assert_eq!(ta.y.to_bits(), tb.y.to_bits());
            assert_eq!(ta.dbh.to_bits(), tb.dbh.to_bits());
            assert_eq!(ta.height.to_bits(), tb.height.to_bits());
        }
        for (ca, cb) in a.clutter.iter().zip(&b.clutter) {
            assert_eq!(ca.center.x.to_bits(), cb.center.x.to_bits());
        }
    }

    #[test]
    fn infeasible_spacing_reports_error() {
        let template = StandTemplate {
            region: [-2.0, -2.0, 2.0, 2.0],
            n_trees: 50,
            min_spacing: 2.0,
            ..StandTemplate::default()
        };
        assert!(matches!(
            generate_world(3, &template),
            Err(SimError::SpacingInfeasible { .. })
        ));
    }
}
