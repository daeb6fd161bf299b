//! Ground labeling on an adaptive local elevation lattice.
//!
//! The ground surface is a regular 2D lattice of node states — elevation,
//! two directional slopes, a confidence and a last-update time. Nodes are
//! updated per scan with a robust low-percentile of the member point
//! elevations, blended into the prior by confidence (a temporal recursion
//! on the previous lattice state), with slopes re-fit from neighboring
//! node elevations. Confidence decays over time so that revisits after
//! drift re-converge within a couple of scans.
//!
//! A point is ground when its height above the local node plane is within
//! `tau_g`. Equidistant points tie-break to the lower (x, y) node index.

use crate::geom::Point3;
use crate::runpar;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy)]
pub struct GroundParams {
    /// Lattice node spacing, meters.
    pub resolution: f64,
    /// Ground band half-width around the node plane, meters.
    pub tau_g: f64,
    /// Robust elevation percentile per cell, in [0, 1].
    pub percentile: f64,
    /// Blend factor toward a fresh observation per visit.
    pub blend: f64,
    /// Floor on the blend so a confident lattice still tracks terrain.
    pub min_blend: f64,
    /// Slope magnitude clamp (rise/run).
    pub max_slope: f64,
    pub confidence_max: f64,
    /// Confidence decay time constant, seconds.
    pub decay_tau: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            resolution: 0.5,
            tau_g: 0.15,
            percentile: 0.10,
            blend: 0.3,
            min_blend: 0.02,
            max_slope: 35f64.to_radians().tan(),
            confidence_max: 0.95,
            decay_tau: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NodeState {
    pub elevation: f64,
    pub slope_x: f64,
    pub slope_y: f64,
    pub confidence: f64,
    pub last_update: f64,
}

/// Per-point binary ground labels plus the count of points that fell
/// outside lattice coverage (labeled non-ground).
#[derive(Debug, Clone)]
pub struct GroundLabeling {
    pub ground: Vec<bool>,
    pub uncovered: usize,
}

#[derive(Debug, Clone)]
pub struct GroundLattice {
    params: GroundParams,
    nodes: HashMap<(i32, i32), NodeState>,
}

impl GroundLattice {
    pub fn new(params: GroundParams) -> Self {
        Self {
            params,
            nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &GroundParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the nearest node; exact midpoints go to the lower index.
    pub fn node_key(&self, x: f64, y: f64) -> (i32, i32) {
        let r = self.params.resolution;
        ((x / r - 0.5).ceil() as i32, (y / r - 0.5).ceil() as i32)
    }

    fn node_center(&self, key: (i32, i32)) -> (f64, f64) {
        let r = self.params.resolution;
        (key.0 as f64 * r, key.1 as f64 * r)
    }

    pub fn node(&self, key: (i32, i32)) -> Option<&NodeState> {
        self.nodes.get(&key)
    }

    /// Updates visited nodes from world-frame points, then re-fits slopes
    /// around them. Unvisited cells are unchanged.
    pub fn update(&mut self, points: &[Point3], time: f64) {
        let mut cells: HashMap<(i32, i32), Vec<f64>> = HashMap::new();
        for p in points {
            cells.entry(self.node_key(p.x, p.y)).or_default().push(p.z);
        }

        let mut touched: Vec<(i32, i32)> = cells.keys().copied().collect();
        touched.sort_unstable();

        for key in &touched {
            let zs = cells.get_mut(key).unwrap();
            zs.sort_by(|a, b| a.total_cmp(b));
            let idx = ((zs.len() - 1) as f64 * self.params.percentile).floor() as usize;
            let obs = zs[idx];
            let p = &self.params;
            match self.nodes.get_mut(key) {
                Some(node) => {
                    let age = (time - node.last_update).max(0.0);
                    let c_eff = node.confidence * (-age / p.decay_tau).exp();
                    let alpha = (p.blend * (1.0 - c_eff)).max(p.min_blend);
                    node.elevation += alpha * (obs - node.elevation);
                    node.confidence = (c_eff + p.blend * (1.0 - c_eff)).min(p.confidence_max);
                    node.last_update = time;
                }
                None => {
                    self.nodes.insert(
                        *key,
                        NodeState {
                            elevation: obs,
                            slope_x: 0.0,
                            slope_y: 0.0,
                            confidence: p.blend,
                            last_update: time,
                        },
                    );
                }
            }
        }

        // slopes change for touched nodes and their lattice neighbors
        let mut slope_keys: Vec<(i32, i32)> = touched
            .iter()
            .flat_map(|&(ix, iy)| {
                [
                    (ix, iy),
                    (ix + 1, iy),
                    (ix - 1, iy),
                    (ix, iy + 1),
                    (ix, iy - 1),
                ]
            })
            .filter(|k| self.nodes.contains_key(k))
            .collect();
        slope_keys.sort_unstable();
        slope_keys.dedup();

        let fits: Vec<((i32, i32), f64, f64)> = slope_keys
            .iter()
            .map(|&k| {
                let (sx, sy) = self.fit_slopes(k);
                (k, sx, sy)
            })
            .collect();
        for (k, sx, sy) in fits {
            let node = self.nodes.get_mut(&k).unwrap();
            node.slope_x = sx;
            node.slope_y = sy;
        }
    }

    fn fit_slopes(&self, key: (i32, i32)) -> (f64, f64) {
        let r = self.params.resolution;
        let h = |dx: i32, dy: i32| {
            self.nodes
                .get(&(key.0 + dx, key.1 + dy))
                .map(|n| n.elevation)
        };
        let center = h(0, 0).unwrap();
        let diff = |plus: Option<f64>, minus: Option<f64>| match (plus, minus) {
            (Some(p), Some(m)) => (p - m) / (2.0 * r),
            (Some(p), None) => (p - center) / r,
            (None, Some(m)) => (center - m) / r,
            (None, None) => 0.0,
        };
        let clamp = self.params.max_slope;
        (
            diff(h(1, 0), h(-1, 0)).clamp(-clamp, clamp),
            diff(h(0, 1), h(0, -1)).clamp(-clamp, clamp),
        )
    }

    /// Height of the node plane evaluated at a point, from the nearest
    /// populated node within a 3-cell search radius.
    pub fn ground_height(&self, x: f64, y: f64) -> Option<f64> {
        let key = self.node_key(x, y);
        let node_at = |k: (i32, i32)| self.nodes.get(&k).map(|n| (k, n));
        let found = node_at(key).or_else(|| {
            let mut best: Option<((i32, i32), &NodeState, f64)> = None;
            for ring in 1..=3i32 {
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        if dx.abs().max(dy.abs()) != ring {
                            continue;
                        }
                        let k = (key.0 + dx, key.1 + dy);
                        if let Some(n) = self.nodes.get(&k) {
                            let (cx, cy) = self.node_center(k);
                            let d = (cx - x).hypot(cy - y);
                            let better = match &best {
                                Some((bk, _, bd)) => d < *bd || (d == *bd && k < *bk),
                                None => true,
                            };
                            if better {
                                best = Some((k, n, d));
                            }
                        }
                    }
                }
                if best.is_some() {
                    break;
                }
            }
            best.map(|(k, n, _)| (k, n))
        });
        found.map(|(k, n)| {
            let (cx, cy) = self.node_center(k);
            n.elevation + n.slope_x * (x - cx) + n.slope_y * (y - cy)
        })
    }

    /// Labels points against the current lattice; deterministic, and safe
    /// to run in parallel against this immutable snapshot.
    pub fn label(&self, points: &[Point3]) -> GroundLabeling {
        let flags: Vec<Option<bool>> = runpar::map_vec(points, |p| {
            let key = self.node_key(p.x, p.y);
            self.nodes.get(&key).map(|node| {
                let (cx, cy) = self.node_center(key);
                let plane = node.elevation + node.slope_x * (p.x - cx) + node.slope_y * (p.y - cy);
                (p.z - plane).abs() <= self.params.tau_g
            })
        });
        let uncovered = flags.iter().filter(|f| f.is_none()).count();
        GroundLabeling {
            ground: flags.into_iter().map(|f| f.unwrap_or(false)).collect(),
            uncovered,
        }
    }

    /// Rows `(ix, iy, h, sx, sy, confidence)` in deterministic order.
    pub fn rows(&self) -> Vec<(i32, i32, f64, f64, f64, f64)> {
        let mut keys: Vec<(i32, i32)> = self.nodes.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter()
            .map(|k| {
                let n = &self.nodes[&k];
                (k.0, k.1, n.elevation, n.slope_x, n.slope_y, n.confidence)
            })
            .collect()
    }
}
