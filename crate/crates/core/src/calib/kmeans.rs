//! Weighted Lloyd k-means with k-means++ seeding, used for per-group
//! patterns, shared patterns and index-histogram clustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 50,
            tol: 1e-7,
            restarts: 4,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `k * dim` centroid coordinates, row-major.
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    pub objective: f64,
    pub dim: usize,
}

impl KMeansResult {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Total weight assigned to each cluster.
    pub fn cluster_weights(&self, weights: Option<&[f64]>) -> Vec<f64> {
        let k = self.centroids.len() / self.dim;
        let mut out = vec![0.0; k];
        for (i, &a) in self.assignment.iter().enumerate() {
            out[a] += weights.map_or(1.0, |w| w[i]);
        }
        out
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lower index.
pub fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = dist2(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Weighted sum of squared distances to the nearest centroid.
pub fn objective(points: &[f64], dim: usize, weights: Option<&[f64]>, centroids: &[f64]) -> f64 {
    points
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, p)| weights.map_or(1.0, |w| w[i]) * nearest(p, centroids, dim).1)
        .sum()
}

fn pick_weighted(rng: &mut ChaCha8Rng, mass: &[f64]) -> Option<usize> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut r = rng.random::<f64>() * total;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            if r < m {
                return Some(i);
            }
            r -= m;
        }
    }
    mass.iter().rposition(|&m| m > 0.0)
}

fn seed_plus_plus(
    points: &[f64],
    dim: usize,
    w: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = pick_weighted(rng, w).unwrap_or(0);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = (0..n)
        .map(|i| dist2(&points[i * dim..(i + 1) * dim], &centroids[..dim]))
        .collect();
    while centroids.len() < k * dim {
        let mass: Vec<f64> = d2.iter().zip(w).map(|(d, w)| d * w).collect();
        // Every point already coincides with a centroid: duplicate the farthest (index 0 on ties).
        let next = pick_weighted(rng, &mass).unwrap_or_else(|| argmax(&d2));
        let start = centroids.len();
        centroids.extend_from_slice(&points[next * dim..(next + 1) * dim]);
        for (i, d) in d2.iter_mut().enumerate() {
            let nd = dist2(&points[i * dim..(i + 1) * dim], &centroids[start..start + dim]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn lloyd(
    points: &[f64],
    dim: usize,
    w: &[f64],
    mut centroids: Vec<f64>,
    params: &KMeansParams,
) -> KMeansResult {
    let n = points.len() / dim;
    let k = params.k;
    let mut assignment = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut prev = f64::INFINITY;
    let mut sums = vec![0.0f64; k * dim];
    let mut mass = vec![0.0f64; k];
    let mut count = vec![0usize; k];
    let mut anchor = vec![0usize; k];
    for _ in 0..params.max_iters {
        let mut obj = 0.0;
        for i in 0..n {
            let (c, d) = nearest(&points[i * dim..(i + 1) * dim], &centroids, dim);
            assignment[i] = c;
            dists[i] = d;
            obj += w[i] * d;
        }
        // Means are accumulated as offsets from each cluster's first member so
        // clusters of identical points reproduce that point exactly.
        sums.iter_mut().for_each(|s| *s = 0.0);
        mass.iter_mut().for_each(|m| *m = 0.0);
        count.iter_mut().for_each(|m| *m = 0);
        for i in 0..n {
            let c = assignment[i];
            if count[c] == 0 {
                anchor[c] = i;
            }
            count[c] += 1;
            mass[c] += w[i];
            let a = anchor[c];
            for j in 0..dim {
                sums[c * dim + j] += w[i] * (points[i * dim + j] - points[a * dim + j]);
            }
        }
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            if count[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let mut far = None;
                for i in 0..n {
                    if taken.contains(&i) {
                        continue;
                    }
                    if far.is_none_or(|f: usize| dists[i] > dists[f]) {
                        far = Some(i);
                    }
                }
                if let Some(f) = far {
                    taken.push(f);
                    centroids[c * dim..(c + 1) * dim]
                        .copy_from_slice(&points[f * dim..(f + 1) * dim]);
                    dists[f] = 0.0;
                }
            } else if mass[c] > 0.0 {
                let a = anchor[c];
                for j in 0..dim {
                    centroids[c * dim + j] = points[a * dim + j] + sums[c * dim + j] / mass[c];
                }
            }
        }
        let converged = prev.is_finite() && (prev - obj).abs() <= params.tol * prev.abs().max(f64::MIN_POSITIVE);
        prev = obj;
        if converged || obj == 0.0 {
            break;
        }
    }
    let mut obj = 0.0;
    for i in 0..n {
        let (c, d) = nearest(&points[i * dim..(i + 1) * dim], &centroids, dim);
        assignment[i] = c;
        obj += w[i] * d;
    }
    KMeansResult {
        centroids,
        assignment,
        objective: obj,
        dim,
    }
}

/// Best of `params.restarts` seeded Lloyd runs. Requires at least one point.
pub fn kmeans(
    points: &[f64],
    dim: usize,
    weights: Option<&[f64]>,
    params: &KMeansParams,
) -> KMeansResult {
    assert!(dim > 0 && !points.is_empty() && points.len() % dim == 0);
    assert!(params.k > 0);
    let n = points.len() / dim;
    let uniform;
    let w = match weights {
        Some(w) if w.iter().any(|&x| x > 0.0) => w,
        _ => {
            uniform = vec![1.0; n];
            &uniform
        }
    };
    let mut best: Option<KMeansResult> = None;
    for r in 0..params.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let init = seed_plus_plus(points, dim, w, params.k, &mut rng);
        let res = lloyd(points, dim, w, init, params);
        if best.as_ref().is_none_or(|b| res.objective < b.objective) {
            best = Some(res);
        }
    }
    best.unwrap()
}
