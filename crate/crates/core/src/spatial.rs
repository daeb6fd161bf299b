//! Hash-grid nearest-neighbor index for small point sets.

use crate::geom::Point3;

/// Uniform grid over 3D points; neighbor queries search the 27 cells
/// around the query, which covers any radius up to the cell size.
#[derive(Debug, Clone)]
pub(crate) struct PointGrid {
    cell: f64,
    map: std::collections::HashMap<(i32, i32, i32), Vec<u32>>,
    points: Vec<Point3>,
}

impl PointGrid {
    pub fn build(points: &[Point3], cell: f64) -> Self {
        let mut map: std::collections::HashMap<(i32, i32, i32), Vec<u32>> =
            std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(Self::key_of(p, cell)).or_default().push(i as u32);
        }
        Self {
            cell,
            map,
            points: points.to_vec(),
        }
    }

    fn key_of(p: &Point3, cell: f64) -> (i32, i32, i32) {
        (
            (p.x / cell).floor() as i32,
            (p.y / cell).floor() as i32,
            (p.z / cell).floor() as i32,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn point(&self, i: u32) -> &Point3 {
        &self.points[i as usize]
    }

    /// Up to `k` nearest indices within `max_dist` (≤ cell size), sorted by
    /// distance with index tie-breaks.
    pub fn nearest_k(&self, q: &Point3, k: usize, max_dist: f64) -> Vec<(u32, f64)> {
        debug_assert!(max_dist <= self.cell + 1e-12);
        let key = Self::key_of(q, self.cell);
        let mut found: Vec<(u32, f64)> = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.map.get(&(key.0 + dx, key.1 + dy, key.2 + dz)) {
                        for &i in list {
                            let d = q.distance(&self.points[i as usize]);
                            if d <= max_dist {
                                found.push((i, d));
                            }
                        }
                    }
                }
            }
        }
        found.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        found.truncate(k);
        found
    }
}
