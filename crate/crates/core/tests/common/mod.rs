//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;

use xmm::data::{dot, sq_dist, EmbeddingSet, Matrix};
use xmm::memory::{BankKind, Banks, MemoryBank};
use xmm::objective::{total_loss, HyperParams, Triplet};

pub fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_rows<R: Rng>(rng: &mut R, k: usize, d: usize) -> Vec<Vec<f64>> {
    (0..k).map(|_| random_unit(rng, d)).collect()
}

/// Minimum total cost over all permutations, summed in row order.
pub fn brute_force_min(cost: &Matrix) -> f64 {
    fn go(cost: &Matrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.rows() {
            *best = best.min(acc);
            return;
        }
        for j in 0..cost.cols() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost.get(row, j), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.cols()], 0.0, &mut best);
    best
}

/// Quadratic DBSCAN: core points joined by union-find, each border point
/// given to the adjacent cluster whose smallest core index is lowest, and
/// clusters numbered by smallest core index.
pub fn reference_dbscan(set: &EmbeddingSet, eps: f64, min_pts: usize) -> Vec<i64> {
    let n = set.len();
    let eps2 = eps * eps;
    let near = |i: usize, j: usize| sq_dist(set.row(i), set.row(j)) <= eps2;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // Roots are the smallest index in each component; number them in order.
    let mut cluster_of_root = vec![-1i64; n];
    let mut next = 0;
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            if cluster_of_root[r] < 0 {
                cluster_of_root[r] = next;
                next += 1;
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                cluster_of_root[find(&mut parent, i)]
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| cluster_of_root[find(&mut parent, j)])
                    .min()
                    .unwrap_or(-1)
            }
        })
        .collect()
}

/// Retrieval metrics by per-positive rank counting.
/// Returns `(map, minp, cmc_curve)`.
pub fn reference_retrieval(query: &EmbeddingSet, gallery: &EmbeddingSet) -> (f64, f64, Vec<f64>) {
    let (qi, gi) = (query.ids().unwrap(), gallery.ids().unwrap());
    let g = gallery.len();
    let (mut ap_sum, mut inp_sum, mut n) = (0.0, 0.0, 0usize);
    let mut first = Vec::new();
    for q in 0..query.len() {
        let sims: Vec<f64> = (0..g).map(|j| dot(query.row(q), gallery.row(j))).collect();
        let rank = |j: usize| {
            1 + (0..g)
                .filter(|&l| sims[l] > sims[j] || (sims[l] == sims[j] && l < j))
                .count()
        };
        let pos_ranks: Vec<usize> = (0..g).filter(|&j| gi[j] == qi[q]).map(rank).collect();
        if pos_ranks.is_empty() {
            continue;
        }
        let m = pos_ranks.len();
        let ap: f64 = pos_ranks
            .iter()
            .map(|&rk| pos_ranks.iter().filter(|&&o| o <= rk).count() as f64 / rk as f64)
            .sum::<f64>()
            / m as f64;
        ap_sum += ap;
        inp_sum += m as f64 / *pos_ranks.iter().max().unwrap() as f64;
        first.push(*pos_ranks.iter().min().unwrap());
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0, vec![0.0; g]);
    }
    let curve = (1..=g)
        .map(|k| first.iter().filter(|&&f| f <= k).count() as f64 / n as f64)
        .collect();
    (ap_sum / n as f64, inp_sum / n as f64, curve)
}

pub fn random_banks<R: Rng>(rng: &mut R, k_v: usize, k_r: usize, d: usize, mu: f64) -> Banks {
    let bank = |rng: &mut R, k: usize, kind| {
        MemoryBank::new(Matrix::from_rows(&random_rows(rng, k, d)), kind, mu).unwrap()
    };
    Banks {
        specific_v: bank(rng, k_v, BankKind::SpecificVisible),
        specific_r: bank(rng, k_r, BankKind::SpecificInfrared),
        agnostic_v: bank(rng, k_v, BankKind::AgnosticVisibleBased),
        agnostic_r: bank(rng, k_r, BankKind::AgnosticInfraredBased),
    }
}

pub fn random_batch<R: Rng>(
    rng: &mut R,
    b: usize,
    k_v: usize,
    k_r: usize,
    d: usize,
) -> Vec<Triplet> {
    (0..b)
        .map(|_| Triplet {
            v: random_unit(rng, d),
            vh: random_unit(rng, d),
            r: random_unit(rng, d),
            label_v: rng.gen_range(0..k_v),
            label_r: rng.gen_range(0..k_r),
            shared: true,
        })
        .collect()
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)` between the analytic
/// gradient of `total_loss` over every feature of the batch and its central
/// difference estimate with step `h`.
pub fn gradient_check(batch: &[Triplet], banks: &Banks, hp: &HyperParams, h: f64) -> f64 {
    let analytic: Vec<f64> = total_loss(batch, banks, hp)
        .unwrap()
        .grads
        .iter()
        .flat_map(|g| g.v.iter().chain(&g.vh).chain(&g.r).copied())
        .collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for t in 0..batch.len() {
        for which in 0..3 {
            for i in 0..batch[t].v.len() {
                let eval = |delta: f64| {
                    let mut b = batch.to_vec();
                    let f = match which {
                        0 => &mut b[t].v,
                        1 => &mut b[t].vh,
                        _ => &mut b[t].r,
                    };
                    f[i] += delta;
                    total_loss(&b, banks, hp).unwrap().total
                };
                numeric.push((eval(h) - eval(-h)) / (2.0 * h));
            }
        }
    }
    let diff = analytic
        .iter()
        .zip(&numeric)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = dot(&analytic, &analytic)
        .sqrt()
        .max(dot(&numeric, &numeric).sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
