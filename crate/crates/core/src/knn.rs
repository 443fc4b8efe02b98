//! Exact k-nearest-neighbour queries over 3D point sets.
//!
//! Small sets use a brute-force scan; larger sets use a uniform grid hash.
//! Both paths rank candidates by `(squared distance, index)` and sum the
//! selected distances in that order, so they return bit-identical results.

use rayon::prelude::*;

use crate::linalg::Vec3;

/// Point count at which the grid path takes over from brute force.
pub const GRID_THRESHOLD: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KnnStrategy {
    Auto,
    BruteForce,
    Grid,
}

#[inline]
fn dist2(a: &Vec3<f64>, b: &Vec3<f64>) -> f64 {
    let dx = a.0[0] - b.0[0];
    let dy = a.0[1] - b.0[1];
    let dz = a.0[2] - b.0[2];
    dx * dx + dy * dy + dz * dz
}

/// Bounded sorted buffer of the best `(d2, index)` candidates.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::with_capacity(k + 1) }
    }

    #[inline]
    fn worst(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    fn offer(&mut self, d2: f64, idx: usize) {
        if self.items.len() == self.k {
            let last = self.items[self.k - 1];
            if (d2, idx) >= last {
                return;
            }
        }
        let pos = self
            .items
            .partition_point(|&(d, i)| (d, i) < (d2, idx));
        self.items.insert(pos, (d2, idx));
        self.items.truncate(self.k);
    }
}

/// The `k` nearest neighbours of point `query` (itself excluded), sorted by
/// distance then index.
pub fn neighbors_brute(points: &[Vec3<f64>], query: usize, k: usize) -> Vec<(f64, usize)> {
    let mut top = TopK::new(k);
    let q = &points[query];
    for (i, p) in points.iter().enumerate() {
        if i != query {
            top.offer(dist2(q, p), i);
        }
    }
    top.items
}

/// Uniform grid over the bounding box of a point set.
pub struct GridIndex<'a> {
    points: &'a [Vec3<f64>],
    origin: Vec3<f64>,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<usize>,
    entries: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    /// Builds a grid with roughly `per_cell` points per occupied cell volume.
    pub fn new(points: &'a [Vec3<f64>], per_cell: f64) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p.0[a]);
                hi[a] = hi[a].max(p.0[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let ext: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-12)).collect();
        let volume = ext[0] * ext[1] * ext[2];
        let n = points.len().max(1) as f64;
        let mut cell = (volume * per_cell / n).cbrt();
        let max_ext = ext.iter().cloned().fold(0.0, f64::max);
        // cap the number of cells per axis
        cell = cell.max(max_ext / 256.0).max(1e-9);
        let dims = [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).min(257));
        let origin = Vec3(lo);
        let ncells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncells + 1];
        let cells: Vec<usize> = points
            .iter()
            .map(|p| Self::flat(&dims, Self::coords_of(&origin, cell, &dims, p)))
            .collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0usize; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            entries[fill[c]] = i;
            fill[c] += 1;
        }
        Self { points, origin, cell, dims, cell_start: counts, entries }
    }

    fn coords_of(origin: &Vec3<f64>, cell: f64, dims: &[usize; 3], p: &Vec3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p.0[a] - origin.0[a]) / cell).floor();
            (c.max(0.0) as usize).min(dims[a] - 1)
        })
    }

    fn flat(dims: &[usize; 3], c: [usize; 3]) -> usize {
        (c[2] * dims[1] + c[1]) * dims[0] + c[0]
    }

    /// Same contract as [`neighbors_brute`].
    pub fn neighbors(&self, query: usize, k: usize) -> Vec<(f64, usize)> {
        let q = &self.points[query];
        let home = Self::coords_of(&self.origin, self.cell, &self.dims, q);
        let mut top = TopK::new(k);
        let max_ring = *self.dims.iter().max().unwrap();
        for ring in 0..=max_ring {
            let r = ring as isize;
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let c = [home[0] as isize + dx, home[1] as isize + dy, home[2] as isize + dz];
                        if (0..3).any(|a| c[a] < 0 || c[a] >= self.dims[a] as isize) {
                            continue;
                        }
                        let flat = Self::flat(&self.dims, c.map(|x| x as usize));
                        for &i in &self.entries[self.cell_start[flat]..self.cell_start[flat + 1]] {
                            if i != query {
                                top.offer(dist2(q, &self.points[i]), i);
                            }
                        }
                    }
                }
            }
            // every unvisited point is at least `ring * cell` away
            let reach = ring as f64 * self.cell;
            if top.items.len() == k && top.worst() <= reach * reach {
                break;
            }
        }
        top.items
    }
}

/// Mean distance from every point to its `k` nearest neighbours.
///
/// Requires `points.len() > k`.
pub fn mean_knn_distances(points: &[Vec3<f64>], k: usize, strategy: KnnStrategy) -> Vec<f64> {
    assert!(k >= 1 && points.len() > k, "need more than k points");
    let use_grid = match strategy {
        KnnStrategy::Auto => points.len() >= GRID_THRESHOLD,
        KnnStrategy::BruteForce => false,
        KnnStrategy::Grid => true,
    };
    let mean = |nb: Vec<(f64, usize)>| nb.iter().map(|&(d2, _)| d2.sqrt()).sum::<f64>() / k as f64;
    if use_grid {
        let grid = GridIndex::new(points, 2.0);
        (0..points.len())
            .into_par_iter()
            .map(|i| mean(grid.neighbors(i, k)))
            .collect()
    } else {
        (0..points.len())
            .into_par_iter()
            .map(|i| mean(neighbors_brute(points, i, k)))
            .collect()
    }
}

/// Distance from each query point to its nearest point in `targets`.
pub fn nearest_distances(queries: &[Vec3<f64>], targets: &[Vec3<f64>]) -> Vec<f64> {
    if targets.is_empty() {
        return vec![f64::INFINITY; queries.len()];
    }
    // index over the union so the grid never sees an empty set; queries are
    // excluded from candidates by offsetting indices
    let mut all: Vec<Vec3<f64>> = targets.to_vec();
    all.extend_from_slice(queries);
    let grid = GridIndex::new(&all, 2.0);
    let n_t = targets.len();
    queries
        .par_iter()
        .enumerate()
        .map(|(qi, _)| {
            let qidx = n_t + qi;
            let q = &all[qidx];
            let home = GridIndex::coords_of(&grid.origin, grid.cell, &grid.dims, q);
            let mut best = f64::INFINITY;
            let max_ring = *grid.dims.iter().max().unwrap();
            for ring in 0..=max_ring {
                let r = ring as isize;
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            let c = [home[0] as isize + dx, home[1] as isize + dy, home[2] as isize + dz];
                            if (0..3).any(|a| c[a] < 0 || c[a] >= grid.dims[a] as isize) {
                                continue;
                            }
                            let flat = GridIndex::flat(&grid.dims, c.map(|x| x as usize));
                            for &i in &grid.entries[grid.cell_start[flat]..grid.cell_start[flat + 1]] {
                                if i < n_t {
                                    best = best.min(dist2(q, &all[i]));
                                }
                            }
                        }
                    }
                }
                let reach = ring as f64 * grid.cell;
                if best <= reach * reach {
                    break;
                }
            }
            best.sqrt()
        })
        .collect()
}
