//! Lloyd k-means with k-means++ seeding over embedding vectors.
//!
//! Deterministic for a fixed seed. Empty clusters are re-seeded from the
//! point farthest from its assigned centroid, which keeps the recorded
//! inertia trace non-increasing.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Fitted clustering: centroids, per-point assignments (always the
/// argmin-distance centroid), total squared distance, and the inertia
/// after each assignment step.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub inertia_trace: Vec<f64>,
    pub seed: u64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Closest centroid index (ties break to the lowest index) and the
/// squared distance to it.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign(vectors: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let pairs: Vec<(usize, f64)> = vectors.par_iter().map(|v| nearest(v, centroids)).collect();
    let inertia = pairs.iter().map(|(_, d)| d).sum();
    (pairs.into_iter().map(|(c, _)| c).collect(), inertia)
}

fn kmeans_plus_plus(vectors: &[Vec<f64>], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut chosen = vec![false; vectors.len()];
    let first = rng.gen_range(0..vectors.len());
    centroids.push(vectors[first].clone());
    chosen[first] = true;
    let mut dist: Vec<f64> = vectors
        .iter()
        .map(|v| squared_distance(v, &centroids[0]))
        .collect();
    while centroids.len() < n {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut idx = 0;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    idx = i;
                    break;
                }
                target -= d;
                idx = i;
            }
            idx
        } else {
            // All remaining mass is zero (duplicate points): take the
            // first index not yet chosen.
            chosen.iter().position(|c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.push(vectors[pick].clone());
        let newest = centroids.last().unwrap();
        for (d, v) in dist.iter_mut().zip(vectors) {
            let nd = squared_distance(v, newest);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

fn update_centroids(
    vectors: &[Vec<f64>],
    assignments: &[usize],
    n: usize,
    previous: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let d = vectors[0].len();
    let mut sums = vec![vec![0.0; d]; n];
    let mut counts = vec![0usize; n];
    for (v, &c) in vectors.iter().zip(assignments) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(v) {
            *s += x;
        }
    }
    let mut centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .zip(previous)
        .map(|((sum, &count), prev)| {
            if count == 0 {
                prev.clone()
            } else {
                sum.into_iter().map(|s| s / count as f64).collect()
            }
        })
        .collect();

    // Re-seed each empty cluster from the farthest point still assigned
    // to a non-empty cluster; successive re-seeds pick distinct points.
    let empties: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| i)
        .collect();
    if !empties.is_empty() {
        let mut by_distance: Vec<(usize, f64)> = vectors
            .iter()
            .zip(assignments)
            .enumerate()
            .map(|(i, (v, &c))| (i, squared_distance(v, &previous[c])))
            .collect();
        by_distance.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        for (slot, empty) in empties.into_iter().enumerate() {
            if let Some(&(point, _)) = by_distance.get(slot) {
                centroids[empty] = vectors[point].clone();
            }
        }
    }
    centroids
}

/// Cluster `vectors` into `n` groups. Stops when assignments stabilize or
/// after `max_iters` update rounds; the returned assignments are always
/// recomputed against the final centroids.
pub fn kmeans(vectors: &[Vec<f64>], n: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    if n == 0 || vectors.len() < n {
        return Err(Error::DegenerateInput(format!(
            "{} points for {} clusters",
            vectors.len(),
            n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(vectors, n, &mut rng);
    let (mut assignments, mut inertia) = assign(vectors, &centroids);
    let mut trace = vec![inertia];

    for _ in 0..max_iters {
        centroids = update_centroids(vectors, &assignments, n, &centroids);
        let (new_assignments, new_inertia) = assign(vectors, &centroids);
        let stable = new_assignments == assignments;
        assignments = new_assignments;
        inertia = new_inertia;
        trace.push(inertia);
        if stable {
            break;
        }
    }

    Ok(ClusterModel {
        centroids,
        assignments,
        inertia,
        inertia_trace: trace,
        seed,
    })
}
