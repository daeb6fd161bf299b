//! Tree stem detection and DBH estimation on the final map cloud.
//!
//! Candidate stems come from hierarchical clustering of the non-ground
//! points plus a neighborhood merge of leaf clusters with nearly
//! coincident footprints. Each candidate is sliced in the 1.2–1.4 m band
//! above local ground, projected to 2D, cleaned with the `μ ± ω·σ`
//! k-nearest-neighbor rule (ω = 0.4, k = 10), and fit with a circle —
//! algebraic seed refined by geometric Gauss-Newton, which keeps partial
//! arcs honest since the lidar usually sees one side of a trunk.

use crate::cluster::{cluster_hierarchically, merge_small_clusters};
use crate::geom::Point3;
use crate::ground::GroundLattice;
use crate::runpar;
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    /// Minimum points for a cluster to count as a tree.
    pub min_tree_points: usize,
    /// DBH measurement band above local ground, meters.
    pub band: (f64, f64),
    /// Neighbor count for the outlier statistic.
    pub knn_k: usize,
    /// Outlier interval half-width in standard deviations.
    pub omega: f64,
    /// Upper bound on a plausible trunk footprint, meters.
    pub max_trunk_diameter: f64,
    /// Horizontal centroid gap below which leaf clusters merge, meters.
    pub merge_gap: f64,
    /// Required vertical extent above ground for a stem candidate.
    pub min_vertical_extent: f64,
    /// A stem candidate must reach below this height above ground.
    pub max_base_height: f64,
    pub min_slice_points: usize,
    /// Circle fits with a worse rms are rejected (merged/confounded stems).
    pub max_fit_rms: f64,
    pub min_dbh: f64,
    pub cluster_k: usize,
    pub sigma_term: usize,
    pub max_depth: u32,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            min_tree_points: 100,
            band: (1.2, 1.4),
            knn_k: 10,
            omega: 0.4,
            max_trunk_diameter: 1.2,
            merge_gap: 0.3,
            min_vertical_extent: 1.5,
            max_base_height: 0.8,
            min_slice_points: 5,
            max_fit_rms: 0.05,
            min_dbh: 0.05,
            cluster_k: 4,
            sigma_term: 75,
            max_depth: 12,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("only {found} points in the DBH band (need {need})")]
    NotEnoughSlicePoints { found: usize, need: usize },
    #[error("slice points are collinear; no circle through them")]
    DegenerateArc,
    #[error("fitted radius {radius:.3} m outside the plausible range")]
    ImplausibleRadius { radius: f64 },
    #[error("circle fit rms {rms:.3} m too large for a single stem")]
    PoorFit { rms: f64 },
    #[error("no ground reference near the candidate")]
    NoGroundReference,
}

/// A detected stem.
#[derive(Debug, Clone)]
pub struct TreeModel {
    pub id: u32,
    /// Stem center on the ground plane (world x, y).
    pub center: (f64, f64),
    /// Diameter at breast height, meters.
    pub dbh: f64,
    pub point_count: u32,
    /// 2D points the circle was fit to.
    pub slice_points: Vec<(f64, f64)>,
    /// Radial rms residual of the fit, meters.
    pub fit_rms: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CircleFit {
    pub center: (f64, f64),
    pub radius: f64,
    pub rms: f64,
    pub inliers: usize,
}

/// A merged cluster that passed the stem gates and awaits DBH estimation.
#[derive(Debug, Clone)]
pub struct TreeCandidate {
    pub points: Vec<Point3>,
    pub ground_height: f64,
}

/// Keeps points whose height above `ground_height` lies in `band`,
/// dropping z.
pub fn slice_trunk(
    points: &[Point3],
    ground_height: f64,
    band: (f64, f64),
    min_points: usize,
) -> Result<Vec<(f64, f64)>, TreeError> {
    let slice: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| {
            let h = p.z - ground_height;
            h >= band.0 && h <= band.1
        })
        .map(|p| (p.x, p.y))
        .collect();
    if slice.len() < min_points {
        return Err(TreeError::NotEnoughSlicePoints {
            found: slice.len(),
            need: min_points,
        });
    }
    Ok(slice)
}

/// Drops points whose mean k-nearest-neighbor distance falls outside
/// `μ ± ω·σ` over the set. Fewer than `k + 1` points pass through
/// unchanged.
pub fn remove_outliers(points: &[(f64, f64)], k: usize, omega: f64) -> Vec<(f64, f64)> {
    let n = points.len();
    if n < k + 1 {
        log::warn!("outlier removal skipped: {n} points < k+1 = {}", k + 1);
        return points.to_vec();
    }
    let mean_knn: Vec<f64> = runpar::map_indexed_vec(points, |i, p| {
        let mut d: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| (p.0 - q.0).hypot(p.1 - q.1))
            .collect();
        d.sort_by(|a, b| a.total_cmp(b));
        d[..k].iter().sum::<f64>() / k as f64
    });
    let mu = mean_knn.iter().sum::<f64>() / n as f64;
    let var = mean_knn.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / n as f64;
    let sigma = var.sqrt();
    points
        .iter()
        .zip(&mean_knn)
        .filter(|(_, d)| (**d - mu).abs() <= omega * sigma)
        .map(|(p, _)| *p)
        .collect()
}

/// Algebraic (Kåsa) least-squares circle refined by geometric Gauss-Newton
/// on `Σ(‖p − c‖ − r)²`.
pub fn fit_circle(points: &[(f64, f64)]) -> Result<CircleFit, TreeError> {
    if points.len() < 3 {
        return Err(TreeError::DegenerateArc);
    }
    let n = points.len() as f64;

    // Kåsa seed: x² + y² + D·x + E·y + F = 0 in normal-equation form
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (x, y) in points {
        let row = Vector3::new(*x, *y, 1.0);
        let rhs = -(x * x + y * y);
        a += row * row.transpose();
        b += row * rhs;
    }
    let sol = a.lu().solve(&b).ok_or(TreeError::DegenerateArc)?;
    let mut cx = -0.5 * sol[0];
    let mut cy = -0.5 * sol[1];
    let r2 = cx * cx + cy * cy - sol[2];
    if !r2.is_finite() || r2 <= 0.0 {
        return Err(TreeError::DegenerateArc);
    }
    let mut r = r2.sqrt();

    // geometric refinement
    for _ in 0..50 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (x, y) in points {
            let dx = x - cx;
            let dy = y - cy;
            let d = (dx * dx + dy * dy).sqrt();
            if d < 1e-12 {
                continue;
            }
            let res = d - r;
            let jac = Vector3::new(-dx / d, -dy / d, -1.0);
            jtj += jac * jac.transpose();
            jtr += jac * res;
        }
        let step = match jtj.lu().solve(&(-jtr)) {
            Some(s) => s,
            None => break,
        };
        cx += step[0];
        cy += step[1];
        r += step[2];
        if step.norm() < 1e-10 {
            break;
        }
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(TreeError::DegenerateArc);
    }

    let rms = (points
        .iter()
        .map(|(x, y)| {
            let d = (x - cx).hypot(y - cy) - r;
            d * d
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(CircleFit {
        center: (cx, cy),
        radius: r,
        rms,
        inliers: points.len(),
    })
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let root = self.find(self.0[i]);
            self.0[i] = root;
        }
        self.0[i]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

/// Clusters the non-ground cloud and returns stem candidates: groups of
/// leaf clusters with horizontal centroid gaps below `merge_gap` that are
/// big enough, vertically extended, rooted near the ground, and no wider
/// than a plausible trunk in the DBH band.
pub fn detect_trees(
    points: &[Point3],
    lattice: &GroundLattice,
    params: &TreeParams,
) -> Vec<TreeCandidate> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut tree = cluster_hierarchically(
        points,
        params.cluster_k,
        params.sigma_term,
        params.max_depth,
        0xf0f0_5eed,
    );
    merge_small_clusters(&mut tree, 15);
    let leaves = tree.leaves();
    let centroids: Vec<Point3> = leaves.iter().map(|&l| tree.nodes[l].centroid).collect();

    // neighborhood merge over leaf centroids via a grid hash
    let cell = params.merge_gap.max(1e-3);
    let mut grid: std::collections::HashMap<(i32, i32), Vec<usize>> =
        std::collections::HashMap::new();
    for (i, c) in centroids.iter().enumerate() {
        let key = ((c.x / cell).floor() as i32, (c.y / cell).floor() as i32);
        grid.entry(key).or_default().push(i);
    }
    let mut uf = UnionFind::new(centroids.len());
    for (i, c) in centroids.iter().enumerate() {
        let key = ((c.x / cell).floor() as i32, (c.y / cell).floor() as i32);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = grid.get(&(key.0 + dx, key.1 + dy)) {
                    for &j in list {
                        if j > i && centroids[i].distance_xy(&centroids[j]) < params.merge_gap {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for i in 0..centroids.len() {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }

    let mut candidates = Vec::new();
    for (_, leaf_ids) in groups {
        let mut members: Vec<Point3> = Vec::new();
        for &li in &leaf_ids {
            for &pi in &tree.nodes[leaves[li]].members {
                members.push(points[pi as usize]);
            }
        }
        if members.len() < params.min_tree_points {
            continue;
        }
        let cx = members.iter().map(|p| p.x).sum::<f64>() / members.len() as f64;
        let cy = members.iter().map(|p| p.y).sum::<f64>() / members.len() as f64;
        let ground = match lattice.ground_height(cx, cy) {
            Some(h) => h,
            None => continue,
        };
        let min_h = members
            .iter()
            .map(|p| p.z - ground)
            .fold(f64::INFINITY, f64::min);
        let max_h = members
            .iter()
            .map(|p| p.z - ground)
            .fold(f64::NEG_INFINITY, f64::max);
        if max_h < params.min_vertical_extent || min_h > params.max_base_height {
            continue;
        }
        // footprint gate at breast height
        let band: Vec<(f64, f64)> = members
            .iter()
            .filter(|p| {
                let h = p.z - ground;
                h >= params.band.0 && h <= params.band.1
            })
            .map(|p| (p.x, p.y))
            .collect();
        if band.len() < params.min_slice_points {
            continue;
        }
        let mut diameter: f64 = 0.0;
        for (i, a) in band.iter().enumerate() {
            for b in &band[i + 1..] {
                diameter = diameter.max((a.0 - b.0).hypot(a.1 - b.1));
            }
        }
        if diameter > params.max_trunk_diameter {
            continue;
        }
        candidates.push(TreeCandidate {
            points: members,
            ground_height: ground,
        });
    }
    candidates
}

/// Slice → outlier removal → circle fit for one candidate.
pub fn estimate_dbh(
    candidate: &TreeCandidate,
    params: &TreeParams,
    id: u32,
) -> Result<TreeModel, TreeError> {
    let slice = slice_trunk(
        &candidate.points,
        candidate.ground_height,
        params.band,
        params.min_slice_points,
    )?;
    let inliers = remove_outliers(&slice, params.knn_k, params.omega);
    let fit = fit_circle(&inliers)?;
    let dbh = 2.0 * fit.radius;
    if dbh > params.max_trunk_diameter || dbh < params.min_dbh {
        return Err(TreeError::ImplausibleRadius { radius: fit.radius });
    }
    if fit.rms > params.max_fit_rms {
        return Err(TreeError::PoorFit { rms: fit.rms });
    }
    Ok(TreeModel {
        id,
        center: fit.center,
        dbh,
        point_count: candidate.points.len() as u32,
        slice_points: inliers,
        fit_rms: fit.rms,
    })
}

/// Full tree analysis over a labeled cloud: detection plus per-candidate
/// DBH estimation (independent per tree, run in parallel). Failed
/// candidates are returned with their drop reasons.
pub fn analyze_trees(
    non_ground: &[Point3],
    lattice: &GroundLattice,
    params: &TreeParams,
) -> (Vec<TreeModel>, Vec<TreeError>) {
    let candidates = detect_trees(non_ground, lattice, params);
    let results: Vec<Result<TreeModel, TreeError>> =
        runpar::map_indexed_vec(&candidates, |i, c| estimate_dbh(c, params, i as u32));
    let mut trees = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        match r {
            Ok(mut t) => {
                t.id = trees.len() as u32;
                trees.push(t);
            }
            Err(e) => {
                log::info!("tree candidate dropped: {e}");
                dropped.push(e);
            }
        }
    }
    (trees, dropped)
}
