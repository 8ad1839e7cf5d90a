//! Unsupervised clustering of face and timbre embeddings.
//!
//! Both clusterers return labels `1..=n` aligned with their input, numbered
//! by first occurrence so that equal partitions produce equal label vectors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansParams};
use crate::linalg::SymmetricEigen;
use crate::model::{cosine_similarity, Embedding};
use crate::scalar::Real;

/// Cluster label per line, `1..=n` without gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    pub labels: BTreeMap<usize, usize>,
    pub n: usize,
}

impl ClusterLabels {
    /// Pairs line ids with the labels a clusterer produced for them.
    pub fn new(line_ids: &[usize], labels: &[usize]) -> Self {
        assert_eq!(line_ids.len(), labels.len());
        let (labels, n) = canonical_labels(labels);
        Self {
            labels: line_ids.iter().copied().zip(labels).collect(),
            n,
        }
    }

    pub fn get(&self, line_id: usize) -> Option<usize> {
        self.labels.get(&line_id).copied()
    }
}

/// Renumbers arbitrary labels to `1..=n` in order of first occurrence.
pub fn canonical_labels(raw: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let labels = raw
        .iter()
        .map(|r| {
            let next = map.len() + 1;
            *map.entry(*r).or_insert(next)
        })
        .collect();
    (labels, map.len())
}

fn check_input<T: Real>(embs: &[Embedding<T>]) -> Result<()> {
    let first = embs.first().ok_or(Error::Empty("embeddings to cluster"))?;
    if let Some(e) = embs.iter().find(|e| e.dim() != first.dim()) {
        return Err(Error::DimMismatch {
            left: first.dim(),
            right: e.dim(),
        });
    }
    Ok(())
}

fn cosine_matrix<T: Real>(embs: &[Embedding<T>]) -> Result<Vec<Vec<T>>> {
    let n = embs.len();
    let mut m = vec![vec![T::one(); n]; n];
    for i in 0..n {
        for j in 0..i {
            let c = cosine_similarity(&embs[i], &embs[j])?;
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}

/// `A[i][j] = max(0, cos(e_i, e_j))`, unit diagonal.
pub fn affinity_matrix<T: Real>(embs: &[Embedding<T>]) -> Result<Vec<Vec<T>>> {
    check_input(embs)?;
    let mut m = cosine_matrix(embs)?;
    for row in &mut m {
        for v in row.iter_mut() {
            *v = v.max(T::zero());
        }
    }
    Ok(m)
}

/// Average-linkage agglomerative clustering on cosine similarity. Merging
/// stops once the most similar pair of clusters falls below `threshold`;
/// ties go to the pair with the smallest cluster indices.
pub fn ahc<T: Real>(embs: &[Embedding<T>], threshold: T) -> Result<Vec<usize>> {
    check_input(embs)?;
    if !(threshold >= -T::one() && threshold <= T::one()) {
        return Err(Error::param(
            "ahc threshold",
            format!("{threshold} outside [-1, 1]"),
        ));
    }
    let n = embs.len();
    let mut sim = cosine_matrix(embs)?;
    // cluster slot = smallest member index; members tracked by `owner`
    let mut size = vec![1u64; n];
    let mut alive = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut active: Vec<usize> = (0..n).collect();
    while active.len() > 1 {
        let mut best: Option<(usize, usize, T)> = None;
        for (ia, &a) in active.iter().enumerate() {
            for &b in &active[ia + 1..] {
                let s = sim[a][b];
                if best.is_none_or(|(_, _, bs)| s > bs) {
                    best = Some((a, b, s));
                }
            }
        }
        let (a, b, s) = best.expect("two active clusters");
        if s < threshold {
            break;
        }
        let (na, nb) = (T::from_count(size[a]), T::from_count(size[b]));
        for &k in &active {
            if k != a && k != b {
                let merged = (na * sim[a][k] + nb * sim[b][k]) / (na + nb);
                sim[a][k] = merged;
                sim[k][a] = merged;
            }
        }
        size[a] += size[b];
        alive[b] = false;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        active.retain(|&k| alive[k]);
    }
    Ok(canonical_labels(&owner).0)
}

/// Picks `k` at the largest gap of ascending eigenvalues,
/// `argmax_{1 <= j <= min(k_max, len - 1)} (λ_{j+1} - λ_j)`, smaller `j` on ties.
pub fn estimate_k_eigengap<T: Real>(eigenvalues: &[T], k_max: usize) -> usize {
    let upper = k_max.min(eigenvalues.len().saturating_sub(1));
    let mut best = (1, None::<T>);
    for j in 1..=upper {
        let gap = eigenvalues[j] - eigenvalues[j - 1];
        if best.1.is_none_or(|g| gap > g) {
            best = (j, Some(gap));
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralParams {
    /// Fixed cluster count; estimated by eigengap when `None`.
    pub k: Option<usize>,
    pub k_max: usize,
    pub kmeans: KMeansParams,
}

impl SpectralParams {
    pub fn with_k_max(k_max: usize, seed: u64) -> Self {
        Self {
            k: None,
            k_max,
            kmeans: KMeansParams {
                seed,
                ..KMeansParams::default()
            },
        }
    }
}

/// Spectral clustering on the clipped cosine affinity with the symmetric
/// normalized Laplacian `I - D^-1/2 A D^-1/2`; rows of the first `k`
/// eigenvectors are unit-normalized and partitioned by seeded k-means.
pub fn spectral_cluster<T: Real>(
    embs: &[Embedding<T>],
    params: &SpectralParams,
) -> Result<Vec<usize>> {
    let affinity = affinity_matrix(embs)?;
    let n = embs.len();
    if params.k_max == 0 {
        return Err(Error::param("k_max", "must be at least 1"));
    }
    if let Some(k) = params.k {
        if k == 0 || k > n {
            return Err(Error::param("k", format!("{k} not in 1..={n}")));
        }
    }
    if n == 1 || params.k == Some(1) {
        return Ok(vec![1; n]);
    }

    let inv_sqrt_deg: Vec<T> = affinity
        .iter()
        .map(|row| T::one() / row.iter().copied().sum::<T>().sqrt())
        .collect();
    let mut laplacian = affinity;
    for (i, row) in laplacian.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let norm = inv_sqrt_deg[i] * *v * inv_sqrt_deg[j];
            *v = if i == j { T::one() - norm } else { -norm };
        }
    }
    let eig = SymmetricEigen::new(&laplacian)?;
    let k = params.k.unwrap_or_else(|| {
        // a virtual eigenvalue past the spectrum lets the gap rule return k = n:
        // a clean cluster's non-null eigenvalues are 1
        let mut values = eig.values.clone();
        let last = *values.last().expect("n >= 2");
        values.push(last.max(T::one()));
        estimate_k_eigengap(&values, params.k_max)
    });
    if k == 1 {
        return Ok(vec![1; n]);
    }

    let rows: Vec<Vec<T>> = eig
        .vectors
        .iter()
        .map(|row| {
            let r = &row[..k];
            let norm = r.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
            if norm > T::zero() {
                r.iter().map(|&x| x / norm).collect()
            } else {
                r.to_vec()
            }
        })
        .collect();
    let fit = kmeans(&rows, k, &params.kmeans);
    Ok(canonical_labels(&fit.labels).0)
}
