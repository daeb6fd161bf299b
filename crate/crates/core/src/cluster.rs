//! Hierarchical unsupervised clustering of non-ground points in 3D.
//!
//! Recursive k-means with a branching factor `k`: each sub-cluster keeps
//! splitting until it holds at most `sigma_term` points (or cannot be
//! divided). Small leaves are merged into their nearest sibling, and every
//! point ends up annotated with its cluster index `c`, range `r` and
//! cluster cardinality `m`.

use crate::geom::Point3;
use crate::runpar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_LLOYD_ITERS: usize = 50;

/// Result of one flat k-means run.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// Per-point cluster index, parallel to the input.
    pub assignments: Vec<u32>,
    pub centroids: Vec<Point3>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
}

fn splitmix(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(salt.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn centroid_of(points: &[Point3], indices: &[u32]) -> Point3 {
    let mut sum = [0.0f64; 3];
    for &i in indices {
        let p = &points[i as usize];
        sum[0] += p.x;
        sum[1] += p.y;
        sum[2] += p.z;
    }
    let n = indices.len().max(1) as f64;
    Point3::new(sum[0] / n, sum[1] / n, sum[2] / n)
}

fn kmeans_indexed(points: &[Point3], indices: &[u32], k: usize, seed: u64) -> KmeansResult {
    assert!(k >= 1);
    let n = indices.len();

    // distinct points, first-seen order
    let mut distinct: Vec<Point3> = Vec::new();
    for &i in indices {
        let p = points[i as usize];
        if !distinct
            .iter()
            .any(|q| q.x == p.x && q.y == p.y && q.z == p.z)
        {
            distinct.push(p);
            if distinct.len() > k {
                break;
            }
        }
    }

    if distinct.len() <= k.min(n) && distinct.len() < k {
        // fewer than k distinct points: each distinct point is a singleton cluster
        let centroids = distinct;
        let assignments: Vec<u32> = indices
            .iter()
            .map(|&i| {
                let p = points[i as usize];
                centroids
                    .iter()
                    .position(|q| q.x == p.x && q.y == p.y && q.z == p.z)
                    .unwrap() as u32
            })
            .collect();
        return KmeansResult {
            assignments,
            centroids,
            inertia: 0.0,
        };
    }

    // k-means++ seeding
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Point3> = Vec::with_capacity(k);
    centroids.push(points[indices[rng.gen_range(0..n)] as usize]);
    let mut d2: Vec<f64> = indices
        .iter()
        .map(|&i| points[i as usize].distance(&centroids[0]).powi(2))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            indices[rng.gen_range(0..n)]
        } else {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = indices[n - 1];
            for (pos, &i) in indices.iter().enumerate() {
                acc += d2[pos];
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c = points[next as usize];
        centroids.push(c);
        for (pos, &i) in indices.iter().enumerate() {
            d2[pos] = d2[pos].min(points[i as usize].distance(&c).powi(2));
        }
    }

    // Lloyd iterations; inertia is non-increasing per iteration
    let mut assignments = vec![0u32; n];
    let mut last_inertia = f64::INFINITY;
    for _ in 0..MAX_LLOYD_ITERS {
        let new_assign: Vec<u32> = runpar::map_vec(indices, |&i| {
            let p = &points[i as usize];
            let mut best = 0u32;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = p.distance(centroid);
                if d < best_d {
                    best_d = d;
                    best = c as u32;
                }
            }
            best
        });

        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0u32; k];
        for (pos, &i) in indices.iter().enumerate() {
            let c = new_assign[pos] as usize;
            let p = &points[i as usize];
            sums[c][0] += p.x;
            sums[c][1] += p.y;
            sums[c][2] += p.z;
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = Point3::new(
                    sums[c][0] / counts[c] as f64,
                    sums[c][1] / counts[c] as f64,
                    sums[c][2] / counts[c] as f64,
                );
            } else {
                // re-seed an empty cluster at the point farthest from its centroid
                let mut far_pos = 0usize;
                let mut far_d = -1.0;
                for (pos, &i) in indices.iter().enumerate() {
                    let d = points[i as usize].distance(&centroids[new_assign[pos] as usize]);
                    if d > far_d {
                        far_d = d;
                        far_pos = pos;
                    }
                }
                centroids[c] = points[indices[far_pos] as usize];
            }
        }

        let inertia: f64 = indices
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                points[i as usize]
                    .distance(&centroids[new_assign[pos] as usize])
                    .powi(2)
            })
            .sum();
        debug_assert!(
            inertia <= last_inertia * (1.0 + 1e-9) + 1e-12,
            "Lloyd inertia increased: {inertia} > {last_inertia}"
        );
        let converged = new_assign == assignments;
        assignments = new_assign;
        last_inertia = inertia;
        if converged {
            break;
        }
    }

    KmeansResult {
        assignments,
        centroids,
        inertia: last_inertia,
    }
}

/// Standard k-means over all points, deterministic under a fixed seed.
/// With fewer than `k` distinct points, the distinct points become
/// singleton clusters.
pub fn kmeans(points: &[Point3], k: usize, seed: u64) -> KmeansResult {
    let indices: Vec<u32> = (0..points.len() as u32).collect();
    kmeans_indexed(points, &indices, k, seed)
}

/// Relative activation of each sibling centroid for a query point:
/// `v_j = max(0, p_j)` with `p_j = mean_k ‖i − C_k‖² − ‖i − C_j‖²`.
pub fn descriptor(query: &Point3, centroids: &[Point3]) -> Vec<f64> {
    assert!(!centroids.is_empty());
    let d2: Vec<f64> = centroids
        .iter()
        .map(|c| query.distance(c).powi(2))
        .collect();
    let mean = d2.iter().sum::<f64>() / d2.len() as f64;
    d2.iter().map(|d| (mean - d).max(0.0)).collect()
}

#[derive(Debug, Clone)]
pub struct ClusterNode {
    pub centroid: Point3,
    /// Point indices; populated on leaves.
    pub members: Vec<u32>,
    pub children: Vec<usize>,
    pub depth: u32,
    /// Set when the node cannot be split further (too few distinct points).
    pub indivisible: bool,
}

impl ClusterNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// The cluster hierarchy; leaves carry the final cluster ids in
/// depth-first order.
#[derive(Debug, Clone)]
pub struct ClusterTree {
    pub nodes: Vec<ClusterNode>,
    pub root: usize,
}

impl ClusterTree {
    /// Leaf arena indices in depth-first (= cluster id) order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.is_leaf() {
                out.push(i);
            } else {
                for &c in node.children.iter().rev() {
                    stack.push(c);
                }
            }
        }
        out
    }

    pub fn total_points(&self) -> usize {
        self.leaves()
            .iter()
            .map(|&l| self.nodes[l].members.len())
            .sum()
    }
}

/// Recursive k-means until every leaf holds ≤ `sigma_term` points or is
/// indivisible; depth is bounded to `max_depth`.
pub fn cluster_hierarchically(
    points: &[Point3],
    k: usize,
    sigma_term: usize,
    max_depth: u32,
    seed: u64,
) -> ClusterTree {
    let mut tree = ClusterTree {
        nodes: Vec::new(),
        root: 0,
    };
    let all: Vec<u32> = (0..points.len() as u32).collect();
    let centroid = centroid_of(points, &all);
    build(points, all, centroid, k, sigma_term, max_depth, seed, 0, &mut tree);
    tree
}

#[allow(clippy::too_many_arguments)]
fn build(
    points: &[Point3],
    indices: Vec<u32>,
    centroid: Point3,
    k: usize,
    sigma_term: usize,
    max_depth: u32,
    seed: u64,
    depth: u32,
    tree: &mut ClusterTree,
) -> usize {
    let id = tree.nodes.len();
    tree.nodes.push(ClusterNode {
        centroid,
        members: Vec::new(),
        children: Vec::new(),
        depth,
        indivisible: false,
    });

    if indices.len() <= sigma_term || depth >= max_depth || indices.len() < 2 {
        tree.nodes[id].members = indices;
        tree.nodes[id].indivisible = tree.nodes[id].members.len() > sigma_term;
        return id;
    }

    let result = kmeans_indexed(points, &indices, k, seed);
    let n_clusters = result.centroids.len();
    let mut groups: Vec<Vec<u32>> = vec![Vec::new(); n_clusters];
    for (pos, &i) in indices.iter().enumerate() {
        groups[result.assignments[pos] as usize].push(i);
    }
    let non_empty: Vec<(Vec<u32>, Point3)> = groups
        .into_iter()
        .zip(result.centroids)
        .filter(|(g, _)| !g.is_empty())
        .collect();

    if non_empty.len() < 2 {
        // could not divide (all points coincide): keep as a leaf
        tree.nodes[id].members = indices;
        tree.nodes[id].indivisible = true;
        return id;
    }

    for (child_idx, (group, c)) in non_empty.into_iter().enumerate() {
        let child_seed = splitmix(seed, child_idx as u64 + 1);
        let child = build(
            points, group, c, k, sigma_term, max_depth, child_seed, depth + 1, tree,
        );
        tree.nodes[id].children.push(child);
    }
    id
}

/// Absorbs every leaf below `min_size` into the sibling leaf with the
/// nearest centroid (ties broken by descriptor activation, then index).
/// Total point count is preserved; a level with a single leaf is left
/// alone.
pub fn merge_small_clusters(tree: &mut ClusterTree, min_size: usize) {
    for parent in 0..tree.nodes.len() {
        let children = tree.nodes[parent].children.clone();
        if children.len() < 2 {
            continue;
        }
        let leaf_children: Vec<usize> = children
            .iter()
            .copied()
            .filter(|&c| tree.nodes[c].is_leaf())
            .collect();
        if leaf_children.len() < 2 {
            continue;
        }
        for &small in &leaf_children {
            if tree.nodes[small].members.len() >= min_size || tree.nodes[small].members.is_empty()
            {
                continue;
            }
            let from = tree.nodes[small].centroid;
            let sibling_centroids: Vec<Point3> = leaf_children
                .iter()
                .map(|&s| tree.nodes[s].centroid)
                .collect();
            let activations = descriptor(&from, &sibling_centroids);
            let mut target: Option<(usize, f64, f64)> = None;
            for (pos, &sib) in leaf_children.iter().enumerate() {
                if sib == small || tree.nodes[sib].members.is_empty() {
                    continue;
                }
                let d = from.distance(&tree.nodes[sib].centroid);
                let act = activations[pos];
                let better = match target {
                    Some((_, bd, bact)) => d < bd || (d == bd && act > bact),
                    None => true,
                };
                if better {
                    target = Some((sib, d, act));
                }
            }
            if let Some((sib, _, _)) = target {
                let moved = std::mem::take(&mut tree.nodes[small].members);
                let (sib_members, sib_centroid) = {
                    let node = &tree.nodes[sib];
                    (node.members.clone(), node.centroid)
                };
                let n_old = sib_members.len() as f64;
                let n_new = moved.len() as f64;
                let mixed = Point3::new(
                    (sib_centroid.x * n_old + from.x * n_new) / (n_old + n_new),
                    (sib_centroid.y * n_old + from.y * n_new) / (n_old + n_new),
                    (sib_centroid.z * n_old + from.z * n_new) / (n_old + n_new),
                );
                let node = &mut tree.nodes[sib];
                node.members.extend(moved);
                node.centroid = mixed;
            }
        }
        // drop emptied leaves from the child list
        let keep: Vec<usize> = tree.nodes[parent]
            .children
            .iter()
            .copied()
            .filter(|&c| !(tree.nodes[c].is_leaf() && tree.nodes[c].members.is_empty()))
            .collect();
        tree.nodes[parent].children = keep;
    }
}

/// Per-point annotation `(c_i, r_i, m_i)` from a built (and merged) tree.
#[derive(Debug, Clone, Copy)]
pub struct PointAnnotation {
    pub cluster_id: u32,
    pub range: f64,
    pub cluster_size: u32,
}

/// Labels every clustered point with its leaf's id and cardinality; the
/// range is the point's distance from the origin of its frame.
pub fn annotate_points(tree: &ClusterTree, points: &[Point3]) -> Vec<Option<PointAnnotation>> {
    let mut out: Vec<Option<PointAnnotation>> = vec![None; points.len()];
    for (cluster_id, leaf) in tree.leaves().into_iter().enumerate() {
        let node = &tree.nodes[leaf];
        let m = node.members.len() as u32;
        for &i in &node.members {
            debug_assert!(out[i as usize].is_none(), "point in two leaves");
            out[i as usize] = Some(PointAnnotation {
                cluster_id: cluster_id as u32,
                range: points[i as usize].norm(),
                cluster_size: m,
            });
        }
    }
    out
}
