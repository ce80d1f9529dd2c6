//! Laplacian eigenmap embedding of flattened trajectories.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::DensityError;

/// Floor on edge weights; keeps stitched components numerically connected.
const MIN_AFFINITY: f64 = 1e-10;

/// Embedded points, one row per input point.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedBatch {
    pub points: DMatrix<f64>,
    /// Index into the source batch for each row.
    pub source_indices: Vec<usize>,
}

impl EmbeddedBatch {
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenmapParams {
    pub k_neighbors: usize,
    pub d_embed: usize,
}

impl Default for EigenmapParams {
    fn default() -> Self {
        Self { k_neighbors: 15, d_embed: 10 }
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn pairwise_distances(points: &[&[f64]]) -> DMatrix<f64> {
    let n = points.len();
    let mut dist = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = points[i]
                .iter()
                .zip(points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    dist
}

/// Symmetric kNN adjacency; stitched so the graph is connected.
fn knn_graph(dist: &DMatrix<f64>, k: usize) -> (Vec<Vec<usize>>, Vec<f64>) {
    let n = dist.nrows();
    let mut adjacency = vec![Vec::new(); n];
    let mut neighbor_distances = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|j| *j != i).collect();
        order.sort_by(|a, b| dist[(i, *a)].total_cmp(&dist[(i, *b)]).then(a.cmp(b)));
        for &j in order.iter().take(k) {
            neighbor_distances.push(dist[(i, j)]);
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
    }
    let mut sets = DisjointSets::new(n);
    for (i, nbrs) in adjacency.iter().enumerate() {
        for &j in nbrs {
            sets.union(i, j);
        }
    }
    loop {
        let root = sets.find(0);
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if sets.find(i) != root {
                continue;
            }
            for j in 0..n {
                if sets.find(j) == root {
                    continue;
                }
                if best.is_none_or(|(d, _, _)| dist[(i, j)] < d) {
                    best = Some((dist[(i, j)], i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        adjacency[i].push(j);
        adjacency[j].push(i);
        sets.union(i, j);
    }
    for nbrs in &mut adjacency {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    (adjacency, neighbor_distances)
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 0 {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    }
}

/// Heat-kernel affinity matrix of the stitched kNN graph.
pub fn affinity_matrix(points: &[&[f64]], k_neighbors: usize) -> DMatrix<f64> {
    let n = points.len();
    let dist = pairwise_distances(points);
    let k = k_neighbors.min(n.saturating_sub(1));
    let (adjacency, nd) = knn_graph(&dist, k);
    let mut sigma = median(nd);
    if !(sigma > 0.0) {
        sigma = 1.0;
    }
    let mut w = DMatrix::zeros(n, n);
    for (i, nbrs) in adjacency.iter().enumerate() {
        for &j in nbrs {
            let d = dist[(i, j)];
            w[(i, j)] = (-d * d / (2.0 * sigma * sigma)).exp().max(MIN_AFFINITY);
        }
    }
    w
}

/// Embeds `points` with eigenvectors 2..d+1 of the random-walk graph
/// Laplacian. Exact duplicates share one graph node, so they land on the
/// same embedded point. The output dimension is min(d_embed, unique - 1).
pub fn laplacian_eigenmap(points: &[Vec<f64>], params: EigenmapParams) -> Result<EmbeddedBatch, DensityError> {
    let n = points.len();
    if params.k_neighbors < 2 {
        return Err(DensityError::Shape("k_neighbors must be at least 2".into()));
    }
    if n <= params.d_embed {
        return Err(DensityError::TooFewPoints { points: n, dim: params.d_embed });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DensityError::NonFinite);
    }

    let mut unique_of: Vec<usize> = Vec::with_capacity(n);
    let mut unique: Vec<&[f64]> = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for p in points {
        let key: Vec<u64> = p.iter().map(|v| (v + 0.0).to_bits()).collect();
        let id = *seen.entry(key).or_insert_with(|| {
            unique.push(p.as_slice());
            unique.len() - 1
        });
        unique_of.push(id);
    }
    let u = unique.len();
    let dim = params.d_embed.min(u.saturating_sub(1));
    if dim == 0 {
        return Ok(EmbeddedBatch {
            points: DMatrix::zeros(n, 0),
            source_indices: (0..n).collect(),
        });
    }

    let w = affinity_matrix(&unique, params.k_neighbors);
    let inv_sqrt_deg = DVector::from_iterator(u, w.row_iter().map(|r| 1.0 / r.sum().sqrt()));
    let normalized = DMatrix::from_fn(u, u, |i, j| w[(i, j)] * inv_sqrt_deg[i] * inv_sqrt_deg[j]);
    let eig = SymmetricEigen::new(normalized);
    let mut order: Vec<usize> = (0..u).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));

    let mut embedded_unique = DMatrix::zeros(u, dim);
    for (c, &idx) in order.iter().skip(1).take(dim).enumerate() {
        let mut v = eig.eigenvectors.column(idx).component_mul(&inv_sqrt_deg);
        // Fix the sign: the largest-magnitude entry is positive.
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        embedded_unique.set_column(c, &v);
    }
    let embedded = DMatrix::from_fn(n, dim, |i, c| embedded_unique[(unique_of[i], c)]);
    Ok(EmbeddedBatch {
        points: embedded,
        source_indices: (0..n).collect(),
    })
}
