//! Seeded k-means with k-means++ initialization and restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct KMeansParams {
    pub restarts: usize,
    pub max_iter: usize,
    /// Convergence when the largest centroid displacement drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            restarts: 50,
            max_iter: 300,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit<T> {
    /// Cluster index in `0..k` per point.
    pub labels: Vec<usize>,
    pub inertia: T,
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

fn nearest<T: Real>(p: &[T], centers: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(p, &centers[0]));
    for (c, center) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<T: Real>(points: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &points[chosen[0]]).to_f64_lossy())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // every point coincides with a center; take the first unused index
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, &points[next]).to_f64_lossy();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn lloyd<T: Real>(
    points: &[Vec<T>],
    mut centers: Vec<Vec<T>>,
    params: &KMeansParams,
) -> KMeansFit<T> {
    let dim = points[0].len();
    let k = centers.len();
    let tol = T::lit(params.tol);
    let mut labels = vec![0; points.len()];
    for _ in 0..params.max_iter {
        for (p, label) in points.iter().zip(labels.iter_mut()) {
            *label = nearest(p, &centers).0;
        }
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0u64; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(p) {
                *s = *s + x;
            }
        }
        let mut shift = T::zero();
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let n = T::from_count(counts[c]);
            let updated: Vec<T> = sums[c].iter().map(|&s| s / n).collect();
            shift = shift.max(sq_dist(&updated, &centers[c]).sqrt());
            centers[c] = updated;
        }
        if shift < tol {
            break;
        }
    }
    let mut inertia = T::zero();
    for (p, label) in points.iter().zip(labels.iter_mut()) {
        let (c, d) = nearest(p, &centers);
        *label = c;
        inertia = inertia + d;
    }
    KMeansFit { labels, inertia }
}

/// Runs `params.restarts` k-means++ initializations from one seeded stream
/// and keeps the lowest-inertia fit (earliest restart wins ties).
pub fn kmeans<T: Real>(points: &[Vec<T>], k: usize, params: &KMeansParams) -> KMeansFit<T> {
    assert!(!points.is_empty() && k >= 1 && k <= points.len());
    if k == 1 {
        return lloyd(points, vec![points[0].clone()], params);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<KMeansFit<T>> = None;
    for _ in 0..params.restarts.max(1) {
        let init = plus_plus_init(points, k, &mut rng);
        let fit = lloyd(points, init, params);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}
