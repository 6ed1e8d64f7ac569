//! Embedding containers, L2 normalization and the `#dim` text format.
//!
//! Every vector that enters the toolkit is projected onto the unit sphere;
//! all similarity math downstream relies on that.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Rows whose norm is below this are rejected by [`normalize`].
pub const ZERO_NORM: f64 = 1e-12;

/// Rows already this close to unit norm are left bit-for-bit untouched at
/// ingestion, so that save/load round-trips are exact.
const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Modality {
    Visible,
    Infrared,
    /// Perturbed copy of the visible stream, index-paired with it.
    IntermediateVisible,
}

impl Modality {
    /// Single-letter tag used in embedding files.
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Visible | Modality::IntermediateVisible => "v",
            Modality::Infrared => "r",
        }
    }

    fn accepts_tag(self, tag: &str) -> bool {
        tag == self.tag()
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "flat buffer does not match shape");
        Matrix { rows, cols, data }
    }

    /// Panics on ragged input; callers that parse untrusted data check first.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Divides `row` by its Euclidean norm. `index` is only used for the error.
pub fn normalize_row(row: &mut [f64], index: usize) -> Result<()> {
    let n = norm(row);
    if !(n >= ZERO_NORM) {
        return Err(Error::ZeroVector(index));
    }
    row.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Like [`normalize_row`] but leaves rows that are already unit (within
/// 1e-12) untouched.
pub(crate) fn ensure_unit_row(row: &mut [f64], index: usize) -> Result<()> {
    let n = norm(row);
    if (n - 1.0).abs() <= UNIT_TOLERANCE {
        return Ok(());
    }
    normalize_row(row, index)
}

/// Row-wise L2 normalization.
pub fn normalize(vectors: &Matrix) -> Result<Matrix> {
    let mut out = vectors.clone();
    for i in 0..out.rows() {
        normalize_row(out.row_mut(i), i)?;
    }
    Ok(out)
}

/// Unit-norm feature vectors of one modality, with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Matrix,
    modality: Modality,
    ids: Option<Vec<i64>>,
}

impl EmbeddingSet {
    /// Builds a set, normalizing every row.
    pub fn new(mut vectors: Matrix, modality: Modality, ids: Option<Vec<i64>>) -> Result<Self> {
        if vectors.rows() == 0 {
            return Err(Error::InvalidConfig(
                "embedding set must hold at least one vector".into(),
            ));
        }
        if let Some(ids) = &ids {
            if ids.len() != vectors.rows() {
                return Err(Error::InvalidConfig(format!(
                    "{} ids for {} vectors",
                    ids.len(),
                    vectors.rows()
                )));
            }
        }
        for i in 0..vectors.rows() {
            ensure_unit_row(vectors.row_mut(i), i)?;
        }
        Ok(EmbeddingSet {
            vectors,
            modality,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn ids(&self) -> Option<&[i64]> {
        self.ids.as_deref()
    }

    pub fn with_modality(mut self, modality: Modality) -> Self {
        self.modality = modality;
        self
    }

    /// Serializes to the `#dim` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "#dim {}", self.dim()).unwrap();
        for (i, row) in self.vectors.iter_rows().enumerate() {
            out.push_str(self.modality.tag());
            if let Some(ids) = &self.ids {
                write!(out, " id:{}", ids[i]).unwrap();
            }
            for x in row {
                // `{}` on f64 prints the shortest string that parses back to
                // the same bits.
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Parses the `#dim` text format. Lines are 1-based in errors.
pub fn parse_embeddings(text: &str, modality: Modality) -> Result<EmbeddingSet> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::ParseError {
        line: 1,
        msg: "missing `#dim <d>` header".into(),
    })?;
    let dim: usize = header
        .strip_prefix("#dim ")
        .and_then(|d| d.trim_end().parse().ok())
        .filter(|&d| d > 0)
        .ok_or(Error::ParseError {
            line: 1,
            msg: "expected `#dim <d>` header".into(),
        })?;

    let mut data = Vec::new();
    let mut ids: Vec<i64> = Vec::new();
    let mut with_ids: Option<bool> = None;
    let mut rows = 0;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::ParseError { line: line_no, msg };
        let mut fields = line.split(' ');
        let tag = fields.next().unwrap_or_default();
        if !modality.accepts_tag(tag) {
            return Err(bad(format!(
                "modality tag `{tag}`, expected `{}`",
                modality.tag()
            )));
        }
        let mut rest: Vec<&str> = fields.collect();
        let has_id = rest.first().is_some_and(|f| f.starts_with("id:"));
        match with_ids {
            None => with_ids = Some(has_id),
            Some(prev) if prev != has_id => {
                return Err(bad("id field present on some records but not others".into()))
            }
            _ => {}
        }
        if has_id {
            let id = rest.remove(0)[3..]
                .parse::<i64>()
                .map_err(|e| bad(format!("bad id: {e}")))?;
            ids.push(id);
        }
        if rest.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: rest.len(),
            });
        }
        for f in rest {
            let x: f64 = f.parse().map_err(|_| bad(format!("bad value `{f}`")))?;
            if !x.is_finite() {
                return Err(bad(format!("non-finite value `{f}`")));
            }
            data.push(x);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::ParseError {
            line: 2,
            msg: "no records".into(),
        });
    }
    let ids = with_ids.unwrap_or(false).then_some(ids);
    EmbeddingSet::new(Matrix::from_flat(rows, dim, data), modality, ids)
}

pub fn load_embeddings(path: impl AsRef<Path>, modality: Modality) -> Result<EmbeddingSet> {
    let text = std::fs::read_to_string(path)?;
    parse_embeddings(&text, modality)
}

/// Noise-perturbed copy of a visible set standing in for an augmented view.
/// Row `i` of the output is paired with row `i` of the input.
pub fn make_intermediate(visible: &EmbeddingSet, sigma: f64, seed: u64) -> Result<EmbeddingSet> {
    if visible.modality() != Modality::Visible {
        return Err(Error::InvalidConfig(
            "intermediate set must derive from a visible set".into(),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("validated sigma");
    let mut vectors = visible.vectors().clone();
    for i in 0..vectors.rows() {
        if sigma > 0.0 {
            for x in vectors.row_mut(i) {
                *x += noise.sample(&mut rng);
            }
        }
        ensure_unit_row(vectors.row_mut(i), i)?;
    }
    EmbeddingSet::new(vectors, Modality::IntermediateVisible, visible.ids.clone())
}

/// Dense cluster labels; `-1` marks noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabels {
    labels: Vec<i64>,
    cluster_count: usize,
}

impl PseudoLabels {
    pub const NOISE: i64 = -1;

    pub fn new(labels: Vec<i64>, cluster_count: usize) -> Result<Self> {
        if let Some(bad) = labels
            .iter()
            .find(|&&l| l != Self::NOISE && !(0..cluster_count as i64).contains(&l))
        {
            return Err(Error::InvalidConfig(format!(
                "label {bad} outside [0, {cluster_count}) and not noise"
            )));
        }
        Ok(PseudoLabels {
            labels,
            cluster_count,
        })
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    /// Cluster of instance `i`, or `None` for noise.
    pub fn cluster_of(&self, i: usize) -> Option<usize> {
        usize::try_from(self.labels[i]).ok()
    }

    /// Member indices per cluster, in instance order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, l) in self.labels.iter().enumerate() {
            if let Ok(k) = usize::try_from(*l) {
                out[k].push(i);
            }
        }
        out
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == Self::NOISE).count()
    }

    /// `#clusters K` header followed by one label per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("#clusters {}\n", self.cluster_count);
        for l in &self.labels {
            writeln!(out, "{l}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalize_examples() {
        let m = normalize(&Matrix::from_rows(&[[3.0, 4.0], [1.0, 0.0]])).unwrap();
        assert!(approx(m.row(0), &[0.6, 0.8], 1e-15));
        assert_eq!(m.row(1), &[1.0, 0.0]);
        let err = normalize(&Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]])).unwrap_err();
        assert_eq!(err, Error::ZeroVector(1));
    }

    #[test]
    fn parse_two_records() {
        let text = "#dim 4\nv 1 0 0 0\nv 0 2 0 0\n";
        let set = parse_embeddings(text, Modality::Visible).unwrap();
        assert_eq!((set.len(), set.dim()), (2, 4));
        assert!(set.ids().is_none());
        assert_eq!(set.row(1), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn parse_with_ids() {
        let text = "#dim 2\nr id:7 1 0\nr id:-3 0 1\n";
        let set = parse_embeddings(text, Modality::Infrared).unwrap();
        assert_eq!(set.ids(), Some(&[7, -3][..]));
    }

    #[test]
    fn parse_dim_mismatch() {
        let text = "#dim 4\nv 1 0 0 0\nv 1 0 0 0 0\n";
        let err = parse_embeddings(text, Modality::Visible).unwrap_err();
        assert_eq!(
            err,
            Error::DimMismatch {
                expected: 4,
                found: 5
            }
        );
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = parse_embeddings("#dim 2\nv 1 0\nv 1 x\n", Modality::Visible).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 3, .. }), "{err:?}");
        let err = parse_embeddings("v 1 0\n", Modality::Visible).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 1, .. }));
        let err = parse_embeddings("#dim 2\nr 1 0\n", Modality::Visible).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 2, .. }));
        let err = parse_embeddings("#dim 2\nv id:1 1 0\nv 0 1\n", Modality::Visible).unwrap_err();
        assert!(matches!(err, Error::ParseError { line: 3, .. }));
        let err = parse_embeddings("#dim 2\nv 0 0\n", Modality::Visible).unwrap_err();
        assert_eq!(err, Error::ZeroVector(0));
    }

    #[test]
    fn intermediate_zero_sigma_is_identity() {
        let v = EmbeddingSet::new(
            Matrix::from_rows(&[[0.6, 0.8], [1.0, 0.0]]),
            Modality::Visible,
            Some(vec![4, 5]),
        )
        .unwrap();
        let m = make_intermediate(&v, 0.0, 9).unwrap();
        assert_eq!(m.vectors(), v.vectors());
        assert_eq!(m.ids(), v.ids());
        assert_eq!(m.modality(), Modality::IntermediateVisible);
    }

    #[test]
    fn intermediate_requires_visible() {
        let r =
            EmbeddingSet::new(Matrix::from_rows(&[[1.0, 0.0]]), Modality::Infrared, None).unwrap();
        assert!(make_intermediate(&r, 0.1, 0).is_err());
    }

    #[test]
    fn pseudo_labels_members() {
        let p = PseudoLabels::new(vec![1, -1, 0, 1], 2).unwrap();
        assert_eq!(p.members(), vec![vec![2], vec![0, 3]]);
        assert_eq!(p.noise_count(), 1);
        assert_eq!(p.cluster_of(1), None);
        assert!(PseudoLabels::new(vec![2], 2).is_err());
    }
}
