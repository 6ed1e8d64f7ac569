//! Retrieval metrics, matching quality against ground truth, and the
//! positive-pair distance histogram.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::data::{dot, sq_dist, EmbeddingSet, PseudoLabels};
use crate::error::{Error, Result};
use crate::matching::MatchResult;

/// Ranks reported in [`RetrievalReport::cmc`].
pub const CMC_RANKS: [usize; 3] = [1, 10, 20];

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub map: f64,
    /// Rank-1, Rank-10, Rank-20 accuracy.
    pub cmc: [f64; 3],
    pub minp: f64,
    /// Queries with at least one positive in the gallery.
    pub n_queries: usize,
    /// Queries skipped for having no positive.
    pub n_skipped: usize,
    /// Full CMC curve; entry `k-1` is Rank-k accuracy.
    pub cmc_curve: Vec<f64>,
}

impl RetrievalReport {
    /// Rank-k accuracy for any `k ≥ 1` (saturates past the gallery size).
    pub fn rank(&self, k: usize) -> f64 {
        assert!(k >= 1);
        let i = (k - 1).min(self.cmc_curve.len().saturating_sub(1));
        self.cmc_curve.get(i).copied().unwrap_or(0.0)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "map={}", self.map).unwrap();
        for (k, v) in CMC_RANKS.iter().zip(self.cmc) {
            writeln!(s, "rank{k}={v}").unwrap();
        }
        writeln!(s, "minp={}", self.minp).unwrap();
        writeln!(s, "n_queries={}", self.n_queries).unwrap();
        writeln!(s, "n_skipped={}", self.n_skipped).unwrap();
        s
    }
}

/// Per-query outcome: average precision, inverse negative penalty and the
/// rank of the first positive (all 1-based ranks).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScore {
    pub ap: f64,
    pub inp: f64,
    pub first_hit: usize,
}

/// Scores one ranked list given as relevance flags in rank order.
/// `None` when there is no positive.
pub fn score_ranking(relevant: &[bool]) -> Option<QueryScore> {
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut first_hit = 0;
    let mut last_hit = 0;
    for (i, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
            if first_hit == 0 {
                first_hit = i + 1;
            }
            last_hit = i + 1;
        }
    }
    (hits > 0).then(|| QueryScore {
        ap: precision_sum / hits as f64,
        inp: hits as f64 / last_hit as f64,
        first_hit,
    })
}

/// Gallery indices sorted by descending cosine similarity; ties by index.
pub fn rank_gallery(query: &[f64], gallery: &EmbeddingSet) -> Vec<usize> {
    let sims: Vec<f64> = (0..gallery.len())
        .map(|j| dot(query, gallery.row(j)))
        .collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order
}

pub fn retrieve_and_score(query: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<RetrievalReport> {
    let qids = query.ids().ok_or(Error::MissingIds("query"))?;
    let gids = gallery.ids().ok_or(Error::MissingIds("gallery"))?;
    if query.dim() != gallery.dim() {
        return Err(Error::DimMismatch {
            expected: query.dim(),
            found: gallery.dim(),
        });
    }
    let scores: Vec<Option<QueryScore>> = (0..query.len())
        .into_par_iter()
        .map(|i| {
            let order = rank_gallery(query.row(i), gallery);
            let rel: Vec<bool> = order.iter().map(|&j| gids[j] == qids[i]).collect();
            score_ranking(&rel)
        })
        .collect();

    let g = gallery.len();
    let valid: Vec<QueryScore> = scores.iter().flatten().copied().collect();
    let n = valid.len();
    let n_skipped = scores.len() - n;
    if n == 0 {
        return Ok(RetrievalReport {
            map: 0.0,
            cmc: [0.0; 3],
            minp: 0.0,
            n_queries: 0,
            n_skipped,
            cmc_curve: vec![0.0; g],
        });
    }
    let mut first_hits = vec![0usize; g + 1];
    for s in &valid {
        first_hits[s.first_hit] += 1;
    }
    let cmc_curve: Vec<f64> = first_hits[1..]
        .iter()
        .scan(0usize, |acc, &h| {
            *acc += h;
            Some(*acc as f64 / n as f64)
        })
        .collect();
    let map = valid.iter().map(|s| s.ap).sum::<f64>() / n as f64;
    let minp = valid.iter().map(|s| s.inp).sum::<f64>() / n as f64;
    let mut report = RetrievalReport {
        map,
        cmc: [0.0; 3],
        minp,
        n_queries: n,
        n_skipped,
        cmc_curve,
    };
    for (slot, k) in CMC_RANKS.iter().enumerate() {
        report.cmc[slot] = report.rank(*k);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchQuality {
    pub pair_precision: f64,
    pub pair_recall: f64,
    pub coverage: f64,
}

impl MatchQuality {
    pub fn to_text(&self) -> String {
        format!(
            "pair_precision={}\npair_recall={}\ncoverage={}\n",
            self.pair_precision, self.pair_recall, self.coverage
        )
    }
}

/// Most frequent ground-truth identity per cluster; ties go to the lowest id.
pub fn majority_ids(labels: &PseudoLabels, ids: &[i64]) -> Vec<i64> {
    labels
        .members()
        .iter()
        .map(|members| {
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for &i in members {
                *counts.entry(ids[i]).or_default() += 1;
            }
            // BTreeMap iterates ids ascending, so keeping the first maximum
            // prefers the lowest id.
            let mut best = (i64::MIN, 0usize);
            for (id, c) in counts {
                if c > best.1 {
                    best = (id, c);
                }
            }
            best.0
        })
        .collect()
}

pub fn match_quality(
    m: &MatchResult,
    labels_v: &PseudoLabels,
    labels_r: &PseudoLabels,
    ids_v: Option<&[i64]>,
    ids_r: Option<&[i64]>,
) -> Result<MatchQuality> {
    let ids_v = ids_v.ok_or(Error::MissingIds("visible"))?;
    let ids_r = ids_r.ok_or(Error::MissingIds("infrared"))?;
    let maj_v = majority_ids(labels_v, ids_v);
    let maj_r = majority_ids(labels_r, ids_r);
    let pairs = m.q.pairs();
    let correct: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|&(a, b)| maj_v[a] == maj_r[b])
        .collect();
    let pair_precision = if pairs.is_empty() {
        0.0
    } else {
        correct.len() as f64 / pairs.len() as f64
    };

    let in_v: std::collections::BTreeSet<i64> = maj_v.iter().copied().collect();
    let in_r: std::collections::BTreeSet<i64> = maj_r.iter().copied().collect();
    let both: Vec<i64> = in_v.intersection(&in_r).copied().collect();
    let hit: std::collections::BTreeSet<i64> = correct.iter().map(|&(a, _)| maj_v[a]).collect();
    let pair_recall = if both.is_empty() {
        0.0
    } else {
        both.iter().filter(|id| hit.contains(id)).count() as f64 / both.len() as f64
    };

    let (kv, kr) = (m.q.rows(), m.q.cols());
    let covered = (0..kv).filter(|&i| m.q.row_count(i) > 0).count()
        + (0..kr).filter(|&j| m.q.col_count(j) > 0).count();
    let coverage = covered as f64 / (kv + kr) as f64;
    Ok(MatchQuality {
        pair_precision,
        pair_recall,
        coverage,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges spanning [0, 2].
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Index of the fullest bin (lowest index on ties).
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }

    /// Two columns: `bin_left count`.
    pub fn to_text(&self) -> String {
        self.counts
            .iter()
            .zip(&self.edges)
            .map(|(c, e)| format!("{e} {c}\n"))
            .collect()
    }
}

/// Distances between randomly drawn cross-modality same-identity pairs,
/// binned uniformly over [0, 2].
pub fn positive_distance_histogram<R: Rng>(
    visible: &EmbeddingSet,
    infrared: &EmbeddingSet,
    n_pairs: usize,
    bins: usize,
    rng: &mut R,
) -> Result<Histogram> {
    let ids_v = visible.ids().ok_or(Error::MissingIds("visible"))?;
    let ids_r = infrared.ids().ok_or(Error::MissingIds("infrared"))?;
    if bins == 0 {
        return Err(Error::InvalidConfig("bins must be >= 1".into()));
    }
    let mut by_id_r: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (j, id) in ids_r.iter().enumerate() {
        by_id_r.entry(*id).or_default().push(j);
    }
    // Every positive pair is (visible i, infrared j); draw uniformly over
    // all of them via cumulative counts.
    let mut cumulative = Vec::with_capacity(ids_v.len());
    let mut total = 0usize;
    for id in ids_v {
        total += by_id_r.get(id).map_or(0, Vec::len);
        cumulative.push(total);
    }
    if total == 0 {
        return Err(Error::NoPositivePairs);
    }
    let width = 2.0 / bins as f64;
    let edges = (0..=bins).map(|b| 2.0 * b as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for _ in 0..n_pairs {
        let t = rng.gen_range(0..total);
        let i = cumulative.partition_point(|&c| c <= t);
        let before = if i == 0 { 0 } else { cumulative[i - 1] };
        let j = by_id_r[&ids_v[i]][t - before];
        let d = sq_dist(visible.row(i), infrared.row(j)).sqrt();
        let b = ((d / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}
