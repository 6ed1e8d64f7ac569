//! DBSCAN pseudo-labelling and cluster centroids.

use rayon::prelude::*;

use crate::data::{normalize_row, sq_dist, EmbeddingSet, Matrix, PseudoLabels};
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 0.6;
pub const DEFAULT_MIN_PTS: usize = 4;

/// Indices within `eps` (inclusive) of each point, the point itself included.
fn neighbourhoods(set: &EmbeddingSet, eps: f64) -> Vec<Vec<usize>> {
    let eps2 = eps * eps;
    let n = set.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| sq_dist(set.row(i), set.row(j)) <= eps2)
                .collect()
        })
        .collect()
}

/// Density-based clustering over Euclidean distance.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Clusters are numbered in the order their first core point
/// is met while scanning instances by index; a border point reachable from
/// several clusters joins the first one that expands over it.
pub fn dbscan(set: &EmbeddingSet, eps: f64, min_pts: usize) -> Result<PseudoLabels> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if min_pts == 0 {
        return Err(Error::InvalidConfig("min_pts must be >= 1".into()));
    }
    let n = set.len();
    let hoods = neighbourhoods(set, eps);
    let is_core: Vec<bool> = hoods.iter().map(|h| h.len() >= min_pts).collect();

    let mut labels = vec![PseudoLabels::NOISE; n];
    let mut k: i64 = 0;
    let mut stack = Vec::new();
    for seed in 0..n {
        if labels[seed] != PseudoLabels::NOISE || !is_core[seed] {
            continue;
        }
        labels[seed] = k;
        stack.push(seed);
        while let Some(p) = stack.pop() {
            for &q in &hoods[p] {
                if labels[q] == PseudoLabels::NOISE {
                    labels[q] = k;
                    if is_core[q] {
                        stack.push(q);
                    }
                }
            }
        }
        k += 1;
    }
    if k == 0 {
        return Err(Error::NoClusters);
    }
    PseudoLabels::new(labels, k as usize)
}

/// Normalized cluster means, one row per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub matrix: Matrix,
    pub counts: Vec<usize>,
}

impl Centroids {
    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Wraps pre-computed unit rows (tests, hand-built instances).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let mut matrix = Matrix::from_rows(rows);
        for i in 0..matrix.rows() {
            normalize_row(matrix.row_mut(i), i)?;
        }
        let counts = vec![1; matrix.rows()];
        Ok(Centroids { matrix, counts })
    }
}

pub fn centroids(set: &EmbeddingSet, labels: &PseudoLabels) -> Result<Centroids> {
    if labels.len() != set.len() {
        return Err(Error::InvalidConfig(format!(
            "{} labels for {} instances",
            labels.len(),
            set.len()
        )));
    }
    let k = labels.cluster_count();
    if k == 0 {
        return Err(Error::NoClusters);
    }
    let d = set.dim();
    let mut matrix = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (c, members) in labels.members().into_iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyCluster(c));
        }
        let row = matrix.row_mut(c);
        for &i in &members {
            row.iter_mut()
                .zip(set.row(i))
                .for_each(|(acc, x)| *acc += x);
        }
        row.iter_mut().for_each(|x| *x /= members.len() as f64);
        normalize_row(row, c)?;
        counts[c] = members.len();
    }
    Ok(Centroids { matrix, counts })
}
