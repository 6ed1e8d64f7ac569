//! Bilateral cross-modality cluster matching.
//!
//! The cost between visible cluster `i` and infrared cluster `j` is the
//! Euclidean distance between their centroids. Each modality in turn acts as
//! the query side and is assigned one-to-one to the other by Kuhn-Munkres;
//! the many-to-many variant then also links every cross-modality cluster
//! that is no farther than the assigned one. The final matrix is the OR of
//! both directions.
//!
//! When the two cluster counts differ, a single injective assignment cannot
//! give every query a partner. Queries left over are re-assigned against the
//! full gallery in further rounds until every query holds exactly one
//! partner, so gallery load stays balanced to within one round. A plain
//! per-row argmin is available as [`MatchMode::Argmin`] for comparison.

use std::fmt;

use crate::clustering::Centroids;
use crate::data::{dot, Matrix};
use crate::error::{Error, Result};

/// `K_v × K_r` centroid distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(pub Matrix);

impl CostMatrix {
    pub fn visible_count(&self) -> usize {
        self.0.rows()
    }

    pub fn infrared_count(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, v: usize, r: usize) -> f64 {
        self.0.get(v, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Visible clusters are the queries; each receives one infrared index.
    VisibleQuery,
    /// Infrared clusters are the queries; each receives one visible index.
    InfraredQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MatchMode {
    Bccm,
    Mbccm,
    /// Per-row argmin anchors instead of assignment rounds. Debug only.
    Argmin,
}

impl std::str::FromStr for MatchMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bccm" => Ok(MatchMode::Bccm),
            "mbccm" => Ok(MatchMode::Mbccm),
            "argmin" => Ok(MatchMode::Argmin),
            other => Err(format!(
                "unknown match mode `{other}` (expected bccm, mbccm or argmin)"
            )),
        }
    }
}

/// Dense boolean matrix, visible clusters by infrared clusters.
#[derive(Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        BoolMatrix {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.data[i * self.cols + j] = true;
    }

    pub fn or(&self, other: &BoolMatrix) -> BoolMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a || *b)
            .collect();
        BoolMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> BoolMatrix {
        let mut t = BoolMatrix::new(self.cols, self.rows);
        for (i, j) in self.pairs() {
            t.set(j, i);
        }
        t
    }

    /// True entries in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |j| (i, j)))
            .filter(|&(i, j)| self.get(i, j))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn row_count(&self, i: usize) -> usize {
        (0..self.cols).filter(|&j| self.get(i, j)).count()
    }

    pub fn col_count(&self, j: usize) -> usize {
        (0..self.rows).filter(|&i| self.get(i, j)).count()
    }

    /// Elementwise `self ⊇ other`.
    pub fn contains(&self, other: &BoolMatrix) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| *a || !*b)
    }
}

impl fmt::Debug for BoolMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BoolMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let line: String = (0..self.cols)
                .map(|j| if self.get(i, j) { '1' } else { '.' })
                .collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub cost: CostMatrix,
    pub q_v: BoolMatrix,
    pub q_r: BoolMatrix,
    pub q: BoolMatrix,
    /// Infrared partner of each visible cluster.
    pub anchors_v: Vec<usize>,
    /// Visible partner of each infrared cluster.
    pub anchors_r: Vec<usize>,
}

impl MatchResult {
    /// `v_cluster r_cluster` per line, row-major.
    pub fn to_pair_list(&self) -> String {
        self.q
            .pairs()
            .into_iter()
            .map(|(a, b)| format!("{a} {b}\n"))
            .collect()
    }
}

pub fn cost_matrix(cv: &Centroids, cr: &Centroids) -> Result<CostMatrix> {
    if cv.dim() != cr.dim() {
        return Err(Error::DimMismatch {
            expected: cv.dim(),
            found: cr.dim(),
        });
    }
    let mut p = Matrix::zeros(cv.len(), cr.len());
    for i in 0..cv.len() {
        let a = cv.matrix.row(i);
        let na = dot(a, a);
        for j in 0..cr.len() {
            let b = cr.matrix.row(j);
            let radicand = na + dot(b, b) - 2.0 * dot(a, b);
            p.set(i, j, radicand.max(0.0).sqrt());
        }
    }
    Ok(CostMatrix(p))
}

/// Minimum-cost perfect matching on a square matrix. Returns the column
/// assigned to each row. Shortest-augmenting-path Hungarian method with
/// row/column potentials; ties resolve towards the lower column index.
pub fn hungarian_square(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "hungarian_square needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    // 1-based, slot 0 is the virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Injective assignment of (a subset of) rows to columns for a rectangular
/// matrix. Pads to square with a constant above every real cost; rows that
/// land on a padded column come back as `None`.
pub fn assign_injective(cost: &Matrix) -> Vec<Option<usize>> {
    let (rows, cols) = (cost.rows(), cost.cols());
    let n = rows.max(cols);
    let max = cost.as_slice().iter().copied().fold(0.0f64, f64::max);
    let pad = max + 1.0;
    let mut square = Matrix::from_flat(n, n, vec![pad; n * n]);
    for i in 0..rows {
        for j in 0..cols {
            square.set(i, j, cost.get(i, j));
        }
    }
    hungarian_square(&square)
        .into_iter()
        .take(rows)
        .map(|j| (j < cols).then_some(j))
        .collect()
}

/// Gives every row exactly one column by repeated injective rounds.
fn assign_rounds(cost: &Matrix) -> Vec<usize> {
    let (rows, cols) = (cost.rows(), cost.cols());
    let mut result = vec![usize::MAX; rows];
    let mut pending: Vec<usize> = (0..rows).collect();
    while !pending.is_empty() {
        let mut sub = Matrix::zeros(pending.len(), cols);
        for (t, &r) in pending.iter().enumerate() {
            sub.row_mut(t).copy_from_slice(cost.row(r));
        }
        let round = assign_injective(&sub);
        let mut left = Vec::new();
        for (t, &r) in pending.iter().enumerate() {
            match round[t] {
                Some(c) => result[r] = c,
                None => left.push(r),
            }
        }
        debug_assert!(left.len() < pending.len());
        pending = left;
    }
    result
}

fn argmin_rows(cost: &Matrix) -> Vec<usize> {
    (0..cost.rows())
        .map(|i| {
            let row = cost.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] < row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn oriented(p: &CostMatrix, direction: Direction) -> Matrix {
    match direction {
        Direction::VisibleQuery => p.0.clone(),
        Direction::InfraredQuery => p.0.transpose(),
    }
}

/// One partner per query cluster, minimizing total cost round by round.
pub fn assign_one_to_one(p: &CostMatrix, direction: Direction) -> Vec<usize> {
    assign_rounds(&oriented(p, direction))
}

/// Per-query argmin partners (lowest index on ties).
pub fn assign_argmin(p: &CostMatrix, direction: Direction) -> Vec<usize> {
    argmin_rows(&oriented(p, direction))
}

/// Boolean matrix marking only the anchor pairs of one direction.
pub fn anchor_matrix(p: &CostMatrix, anchors: &[usize], direction: Direction) -> BoolMatrix {
    let mut q = BoolMatrix::new(p.visible_count(), p.infrared_count());
    for (k, &a) in anchors.iter().enumerate() {
        match direction {
            Direction::VisibleQuery => q.set(k, a),
            Direction::InfraredQuery => q.set(a, k),
        }
    }
    q
}

/// Marks, for every query, each cross-modality cluster at most as far as
/// its anchor. Ties with the anchor distance are included.
pub fn extend_matches(p: &CostMatrix, anchors: &[usize], direction: Direction) -> BoolMatrix {
    let (kv, kr) = (p.visible_count(), p.infrared_count());
    let mut q = BoolMatrix::new(kv, kr);
    match direction {
        Direction::VisibleQuery => {
            for (i, &a) in anchors.iter().enumerate() {
                let limit = p.get(i, a);
                for j in 0..kr {
                    if p.get(i, j) <= limit {
                        q.set(i, j);
                    }
                }
            }
        }
        Direction::InfraredQuery => {
            for (j, &a) in anchors.iter().enumerate() {
                let limit = p.get(a, j);
                for i in 0..kv {
                    if p.get(i, j) <= limit {
                        q.set(i, j);
                    }
                }
            }
        }
    }
    q
}

pub fn match_clusters(cv: &Centroids, cr: &Centroids, mode: MatchMode) -> Result<MatchResult> {
    if cv.is_empty() || cr.is_empty() {
        return Err(Error::NoClusters);
    }
    let cost = cost_matrix(cv, cr)?;
    let (anchors_v, anchors_r) = match mode {
        MatchMode::Argmin => (
            assign_argmin(&cost, Direction::VisibleQuery),
            assign_argmin(&cost, Direction::InfraredQuery),
        ),
        MatchMode::Bccm | MatchMode::Mbccm => (
            assign_one_to_one(&cost, Direction::VisibleQuery),
            assign_one_to_one(&cost, Direction::InfraredQuery),
        ),
    };
    let (q_v, q_r) = match mode {
        MatchMode::Mbccm => (
            extend_matches(&cost, &anchors_v, Direction::VisibleQuery),
            extend_matches(&cost, &anchors_r, Direction::InfraredQuery),
        ),
        MatchMode::Bccm | MatchMode::Argmin => (
            anchor_matrix(&cost, &anchors_v, Direction::VisibleQuery),
            anchor_matrix(&cost, &anchors_r, Direction::InfraredQuery),
        ),
    };
    let q = q_v.or(&q_r);
    Ok(MatchResult {
        cost,
        q_v,
        q_r,
        q,
        anchors_v,
        anchors_r,
    })
}

/// Many-to-many bilateral matching.
pub fn mbccm(cv: &Centroids, cr: &Centroids) -> Result<MatchResult> {
    match_clusters(cv, cr, MatchMode::Mbccm)
}

/// One-to-one bilateral matching (anchors only).
pub fn bccm(cv: &Centroids, cr: &Centroids) -> Result<MatchResult> {
    match_clusters(cv, cr, MatchMode::Bccm)
}
