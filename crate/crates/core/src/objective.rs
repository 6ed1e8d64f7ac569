//! Memory-bank contrastive losses, the prediction-consistency penalty and
//! their gradients with respect to the instance features.
//!
//! Similarity is cosine similarity, so every gradient below is taken through
//! the feature's norm. Prototypes are constants: banks move by momentum,
//! never by gradient.

use serde::{Deserialize, Serialize};

use crate::data::{dot, norm};
use crate::error::{Error, Result};
use crate::memory::{Banks, MemoryBank};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Softmax temperature, shared by the contrastive losses and predictions.
    pub tau: f64,
    /// Weight of the modality-agnostic loss.
    pub alpha: f64,
    /// Weight of the consistency loss.
    pub beta: f64,
    /// Memory momentum.
    pub mu: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            tau: 0.05,
            alpha: 0.9,
            beta: 0.5,
            mu: 0.1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::InvalidConfig("alpha and beta must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::InvalidConfig(format!(
                "mu must lie in [0, 1], got {}",
                self.mu
            )));
        }
        Ok(())
    }
}

/// Cosine similarities of `f` against every prototype, plus what is needed
/// to back-propagate through them.
struct Similarities {
    sims: Vec<f64>,
    inv_proto_norms: Vec<f64>,
    f_norm: f64,
}

impl Similarities {
    fn new(f: &[f64], bank: &MemoryBank) -> Self {
        let f_norm = norm(f);
        let mut sims = Vec::with_capacity(bank.len());
        let mut inv_proto_norms = Vec::with_capacity(bank.len());
        for k in 0..bank.len() {
            let c = bank.prototype(k);
            let inv = 1.0 / norm(c);
            sims.push(dot(f, c) * inv / f_norm);
            inv_proto_norms.push(inv);
        }
        Similarities {
            sims,
            inv_proto_norms,
            f_norm,
        }
    }

    /// `grad += Σ_k w_k · ∂sim_k/∂f`, where
    /// `∂sim_k/∂f = c_k / (|f||c_k|) − sim_k · f / |f|²`.
    fn backprop(&self, f: &[f64], bank: &MemoryBank, weights: &[f64], grad: &mut [f64]) {
        let mut radial = 0.0;
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let scale = w * self.inv_proto_norms[k] / self.f_norm;
            for (g, c) in grad.iter_mut().zip(bank.prototype(k)) {
                *g += scale * c;
            }
            radial += w * self.sims[k];
        }
        let r = radial / (self.f_norm * self.f_norm);
        for (g, x) in grad.iter_mut().zip(f) {
            *g -= r * x;
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `−log softmax(logits)[positive]`, accurate when the loss is tiny: the
/// largest logit is split off so the remainder goes through `ln_1p`.
fn neg_log_softmax(logits: &[f64], positive: usize) -> f64 {
    let mut top = 0;
    for (k, &l) in logits.iter().enumerate() {
        if l > logits[top] {
            top = k;
        }
    }
    let max = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != top)
        .map(|(_, l)| (l - max).exp())
        .sum();
    (max - logits[positive]) + rest.ln_1p()
}

fn check_slot(bank: &MemoryBank, slot: usize) -> Result<()> {
    if slot >= bank.len() {
        return Err(Error::SlotOutOfRange {
            slot,
            len: bank.len(),
        });
    }
    Ok(())
}

/// Softmax over `sim(f, c_k) / τ`.
pub fn predict(f: &[f64], bank: &MemoryBank, tau: f64) -> Vec<f64> {
    let s = Similarities::new(f, bank);
    let logits: Vec<f64> = s.sims.iter().map(|x| x / tau).collect();
    softmax(&logits)
}

/// `−log softmax_+(sim(f, ·)/τ)` against the prototypes of `bank`.
pub fn contrastive_loss(f: &[f64], bank: &MemoryBank, positive: usize, tau: f64) -> Result<f64> {
    check_slot(bank, positive)?;
    let s = Similarities::new(f, bank);
    let logits: Vec<f64> = s.sims.iter().map(|x| x / tau).collect();
    Ok(neg_log_softmax(&logits, positive))
}

/// Contrastive loss and its gradient with respect to `f`, scaled by `weight`
/// and accumulated into `grad`.
pub fn contrastive_loss_grad(
    f: &[f64],
    bank: &MemoryBank,
    positive: usize,
    tau: f64,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_slot(bank, positive)?;
    let s = Similarities::new(f, bank);
    let logits: Vec<f64> = s.sims.iter().map(|x| x / tau).collect();
    let loss = neg_log_softmax(&logits, positive);
    // ∂L/∂logit_k = p_k − [k = +]; ∂logit_k/∂sim_k = 1/τ.
    let mut w = softmax(&logits);
    w[positive] -= 1.0;
    w.iter_mut().for_each(|x| *x *= weight / tau);
    s.backprop(f, bank, &w, grad);
    Ok(loss)
}

/// `½[KL(p‖q) + KL(q‖p)]`.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a.ln() - b.ln()))
        .sum::<f64>()
}

fn check_scale(a: &MemoryBank, b: &MemoryBank) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ScaleMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Symmetric KL between the predictions of two same-scale banks.
pub fn consistency_loss(
    f: &[f64],
    first: &MemoryBank,
    second: &MemoryBank,
    tau: f64,
) -> Result<f64> {
    let mut scratch = vec![0.0; f.len()];
    consistency_loss_grad(f, first, second, tau, 0.0, &mut scratch)
}

pub fn consistency_loss_grad(
    f: &[f64],
    first: &MemoryBank,
    second: &MemoryBank,
    tau: f64,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    check_scale(first, second)?;
    let sa = Similarities::new(f, first);
    let sb = Similarities::new(f, second);
    let a: Vec<f64> = sa.sims.iter().map(|x| x / tau).collect();
    let b: Vec<f64> = sb.sims.iter().map(|x| x / tau).collect();
    let (p, q) = (softmax(&a), softmax(&b));
    // Written in logits: J = ½ Σ (p_k − q_k)(a_k − b_k), the log-partition
    // terms cancel because both distributions sum to one.
    let delta: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let loss = 0.5
        * p.iter()
            .zip(&q)
            .zip(&delta)
            .map(|((pk, qk), dk)| (pk - qk) * dk)
            .sum::<f64>();
    let p_delta = dot(&p, &delta);
    let q_delta = dot(&q, &delta);
    let scale = 0.5 * weight / tau;
    let wa: Vec<f64> = (0..p.len())
        .map(|k| scale * (p[k] * (delta[k] - p_delta) + p[k] - q[k]))
        .collect();
    let wb: Vec<f64> = (0..q.len())
        .map(|k| scale * (-q[k] * (delta[k] - q_delta) - (p[k] - q[k])))
        .collect();
    sa.backprop(f, first, &wa, grad);
    sb.backprop(f, second, &wb, grad);
    Ok(loss)
}

/// One visible instance, its intermediate twin and an infrared instance
/// drawn from a matched cluster pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub v: Vec<f64>,
    pub vh: Vec<f64>,
    pub r: Vec<f64>,
    pub label_v: usize,
    pub label_r: usize,
    /// `label_v` and `label_r` come from one matched cluster pair and are
    /// shared by all three features.
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub v: Vec<f64>,
    pub vh: Vec<f64>,
    pub r: Vec<f64>,
}

impl TripletGrad {
    fn zeros(d: usize) -> Self {
        TripletGrad {
            v: vec![0.0; d],
            vh: vec![0.0; d],
            r: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_ms: f64,
    pub l_ma: f64,
    pub l_cc: f64,
    pub total: f64,
    /// Gradient of `total` with respect to each batch feature.
    pub grads: Vec<TripletGrad>,
}

/// Which loss terms contribute to the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub agnostic: bool,
    pub consistency: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        agnostic: true,
        consistency: true,
    };
    pub const SPECIFIC_ONLY: LossTerms = LossTerms {
        agnostic: false,
        consistency: false,
    };
}

fn check_batch(batch: &[Triplet]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

fn require_shared(t: &Triplet) -> Result<()> {
    if !t.shared {
        return Err(Error::MissingLabel(
            "no shared cross-modality label for this triplet",
        ));
    }
    Ok(())
}

fn ms_item(
    t: &Triplet,
    banks: &Banks,
    tau: f64,
    w: f64,
    g: Option<&mut TripletGrad>,
) -> Result<f64> {
    let (sv, sr) = (&banks.specific_v, &banks.specific_r);
    match g {
        None => Ok(contrastive_loss(&t.v, sv, t.label_v, tau)?
            + contrastive_loss(&t.vh, sv, t.label_v, tau)?
            + contrastive_loss(&t.r, sr, t.label_r, tau)?),
        Some(g) => Ok(
            contrastive_loss_grad(&t.v, sv, t.label_v, tau, w, &mut g.v)?
                + contrastive_loss_grad(&t.vh, sv, t.label_v, tau, w, &mut g.vh)?
                + contrastive_loss_grad(&t.r, sr, t.label_r, tau, w, &mut g.r)?,
        ),
    }
}

fn ma_item(
    t: &Triplet,
    banks: &Banks,
    tau: f64,
    w: f64,
    mut g: Option<&mut TripletGrad>,
) -> Result<f64> {
    require_shared(t)?;
    let mut sum = 0.0;
    for (bank, label) in [
        (&banks.agnostic_v, t.label_v),
        (&banks.agnostic_r, t.label_r),
    ] {
        match g.as_deref_mut() {
            None => {
                for f in [&t.v, &t.vh, &t.r] {
                    sum += contrastive_loss(f, bank, label, tau)?;
                }
            }
            Some(g) => {
                sum += contrastive_loss_grad(&t.v, bank, label, tau, w, &mut g.v)?;
                sum += contrastive_loss_grad(&t.vh, bank, label, tau, w, &mut g.vh)?;
                sum += contrastive_loss_grad(&t.r, bank, label, tau, w, &mut g.r)?;
            }
        }
    }
    Ok(sum)
}

fn cc_item(
    t: &Triplet,
    banks: &Banks,
    tau: f64,
    w: f64,
    mut g: Option<&mut TripletGrad>,
) -> Result<f64> {
    let mut sum = 0.0;
    for (a, b) in [
        (&banks.specific_v, &banks.agnostic_v),
        (&banks.specific_r, &banks.agnostic_r),
    ] {
        match g.as_deref_mut() {
            None => {
                for f in [&t.v, &t.vh, &t.r] {
                    sum += consistency_loss(f, a, b, tau)?;
                }
            }
            Some(g) => {
                sum += consistency_loss_grad(&t.v, a, b, tau, w, &mut g.v)?;
                sum += consistency_loss_grad(&t.vh, a, b, tau, w, &mut g.vh)?;
                sum += consistency_loss_grad(&t.r, a, b, tau, w, &mut g.r)?;
            }
        }
    }
    Ok(sum)
}

fn batch_mean(batch: &[Triplet], item: impl Fn(&Triplet) -> Result<f64>) -> Result<f64> {
    check_batch(batch)?;
    let mut sum = 0.0;
    for t in batch {
        sum += item(t)?;
    }
    Ok(sum / batch.len() as f64)
}

/// Modality-specific loss: each feature against its own modality's bank.
pub fn l_ms(batch: &[Triplet], banks: &Banks, tau: f64) -> Result<f64> {
    batch_mean(batch, |t| ms_item(t, banks, tau, 0.0, None))
}

/// Modality-agnostic loss: every feature against both agnostic banks.
pub fn l_ma(batch: &[Triplet], banks: &Banks, tau: f64) -> Result<f64> {
    batch_mean(batch, |t| ma_item(t, banks, tau, 0.0, None))
}

/// Consistency loss over both same-scale bank pairs.
pub fn l_cc(batch: &[Triplet], banks: &Banks, tau: f64) -> Result<f64> {
    batch_mean(batch, |t| cc_item(t, banks, tau, 0.0, None))
}

/// `l_ms + α·l_ma + β·l_cc` with gradients for every batch feature.
pub fn total_loss(batch: &[Triplet], banks: &Banks, hp: &HyperParams) -> Result<LossReport> {
    total_loss_with(batch, banks, hp, LossTerms::ALL)
}

/// [`total_loss`] restricted to `terms`; disabled terms report 0 and are
/// never evaluated.
pub fn total_loss_with(
    batch: &[Triplet],
    banks: &Banks,
    hp: &HyperParams,
    terms: LossTerms,
) -> Result<LossReport> {
    check_batch(batch)?;
    let d = batch[0].v.len();
    let inv_b = 1.0 / batch.len() as f64;
    let (mut ms, mut ma, mut cc) = (0.0, 0.0, 0.0);
    let mut grads = Vec::with_capacity(batch.len());
    for t in batch {
        let mut g = TripletGrad::zeros(d);
        ms += ms_item(t, banks, hp.tau, inv_b, Some(&mut g))?;
        if terms.agnostic {
            ma += ma_item(t, banks, hp.tau, hp.alpha * inv_b, Some(&mut g))?;
        }
        if terms.consistency {
            cc += cc_item(t, banks, hp.tau, hp.beta * inv_b, Some(&mut g))?;
        }
        grads.push(g);
    }
    let (l_ms, l_ma, l_cc) = (ms * inv_b, ma * inv_b, cc * inv_b);
    let total = l_ms + hp.alpha * l_ma + hp.beta * l_cc;
    Ok(LossReport {
        l_ms,
        l_ma,
        l_cc,
        total,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use crate::memory::BankKind;

    fn bank(rows: &[&[f64]]) -> MemoryBank {
        MemoryBank::new(Matrix::from_rows(rows), BankKind::SpecificVisible, 0.1).unwrap()
    }

    #[test]
    fn identical_prototypes_give_log_k() {
        let b = bank(&[&[0.6, 0.8], &[0.6, 0.8], &[0.6, 0.8]]);
        for f in [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]] {
            let l = contrastive_loss(&f, &b, 1, 0.05).unwrap();
            assert!((l - 3f64.ln()).abs() < 1e-12);
            assert!(predict(&f, &b, 0.05)
                .iter()
                .all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn separated_positive_is_tiny() {
        // log(1 + e^{-20})
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let l = contrastive_loss(&[1.0, 0.0], &b, 0, 0.05).unwrap();
        let oracle = (-20f64).exp().ln_1p();
        assert!((l - oracle).abs() < 1e-20, "{l} vs {oracle}");
        assert!((l - 2.06e-9).abs() < 0.01e-9);
    }

    #[test]
    fn loss_bounds() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]);
        let tau = 0.05;
        for f in [[1.0, 0.0], [-1.0, 0.1], [0.3, -0.9]] {
            for pos in 0..3 {
                let l = contrastive_loss(&f, &b, pos, tau).unwrap();
                assert!(l >= 0.0 && l <= 2.0 / tau + 3f64.ln());
            }
        }
        assert!(matches!(
            contrastive_loss(&[1.0, 0.0], &b, 3, tau),
            Err(Error::SlotOutOfRange { .. })
        ));
    }

    #[test]
    fn prediction_examples() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let p = predict(&[1.0, 0.0], &b, 1.0);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15 && (p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert_eq!(format!("{:.4} {:.4}", p[0], p[1]), "0.7311 0.2689");
        let p = predict(&[1.0, 0.0], &b, 0.001);
        assert!((p[0] - 1.0).abs() < 1e-6 && p[1] < 1e-6);
    }

    #[test]
    fn symmetric_kl_example() {
        let e = std::f64::consts::E;
        let p = [e / (e + 1.0), 1.0 / (e + 1.0)];
        let q = [0.5, 0.5];
        // Direct summation of both KL directions.
        let kl_pq: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
        let kl_qp: f64 = q.iter().zip(&p).map(|(a, b)| a * (a / b).ln()).sum();
        let oracle = 0.5 * (kl_pq + kl_qp);
        assert!((symmetric_kl(&p, &q) - oracle).abs() < 1e-15);
        assert_eq!(format!("{oracle:.4}"), "0.1155");

        // Same value through the bank interface: sims (1, 0) and (0, 0) at τ = 1.
        let first = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let second = bank(&[&[0.0, 1.0], &[0.0, -1.0]]);
        let l = consistency_loss(&[1.0, 0.0], &first, &second, 1.0).unwrap();
        assert!((l - oracle).abs() < 1e-15);
        let swapped = consistency_loss(&[1.0, 0.0], &second, &first, 1.0).unwrap();
        assert!((l - swapped).abs() < 1e-15);
    }

    #[test]
    fn consistency_zero_and_scale() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(consistency_loss(&[0.6, 0.8], &b, &b, 0.05).unwrap(), 0.0);
        let c = bank(&[&[1.0, 0.0]]);
        assert_eq!(
            consistency_loss(&[0.6, 0.8], &b, &c, 0.05).unwrap_err(),
            Error::ScaleMismatch(2, 1)
        );
    }

    fn ideal_banks() -> Banks {
        let e =
            |rows: &[&[f64]], kind| MemoryBank::new(Matrix::from_rows(rows), kind, 0.1).unwrap();
        let rows: &[&[f64]] = &[&[1.0, 0.0], &[0.0, 1.0]];
        Banks {
            specific_v: e(rows, BankKind::SpecificVisible),
            specific_r: e(rows, BankKind::SpecificInfrared),
            agnostic_v: e(rows, BankKind::AgnosticVisibleBased),
            agnostic_r: e(rows, BankKind::AgnosticInfraredBased),
        }
    }

    fn ideal_triplet() -> Triplet {
        Triplet {
            v: vec![1.0, 0.0],
            vh: vec![1.0, 0.0],
            r: vec![1.0, 0.0],
            label_v: 0,
            label_r: 0,
            shared: true,
        }
    }

    #[test]
    fn batch_losses_compose_scalar_oracle() {
        let one = (-20f64).exp().ln_1p();
        let banks = ideal_banks();
        let batch = [ideal_triplet()];
        assert!((l_ms(&batch, &banks, 0.05).unwrap() - 3.0 * one).abs() < 1e-20);
        assert!((l_ma(&batch, &banks, 0.05).unwrap() - 6.0 * one).abs() < 1e-20);
        assert_eq!(l_cc(&batch, &banks, 0.05).unwrap(), 0.0);
        assert_eq!(l_ms(&[], &banks, 0.05).unwrap_err(), Error::EmptyBatch);
        let unshared = Triplet {
            shared: false,
            ..ideal_triplet()
        };
        assert!(matches!(
            l_ma(&[unshared], &banks, 0.05),
            Err(Error::MissingLabel(_))
        ));
    }

    #[test]
    fn degenerate_banks_give_log_k_mixture() {
        let kind = [
            BankKind::SpecificVisible,
            BankKind::SpecificInfrared,
            BankKind::AgnosticVisibleBased,
            BankKind::AgnosticInfraredBased,
        ];
        let same = |k: usize, kind| {
            MemoryBank::new(Matrix::from_rows(&vec![[0.0, 1.0]; k]), kind, 0.1).unwrap()
        };
        let banks = Banks {
            specific_v: same(2, kind[0]),
            specific_r: same(3, kind[1]),
            agnostic_v: same(2, kind[2]),
            agnostic_r: same(3, kind[3]),
        };
        let batch = [ideal_triplet()];
        let (l2, l3) = (2f64.ln(), 3f64.ln());
        assert!((l_ms(&batch, &banks, 0.05).unwrap() - (2.0 * l2 + l3)).abs() < 1e-12);
        assert!((l_ma(&batch, &banks, 0.05).unwrap() - (3.0 * l2 + 3.0 * l3)).abs() < 1e-12);
    }

    #[test]
    fn cc_hand_built_two_prototype_banks() {
        // Single instance f = (1, 0); the visible pair and the infrared pair
        // each give one symmetric KL per feature, all three features equal.
        let mk =
            |rows: &[&[f64]], kind| MemoryBank::new(Matrix::from_rows(rows), kind, 0.1).unwrap();
        let banks = Banks {
            specific_v: mk(&[&[1.0, 0.0], &[0.0, 1.0]], BankKind::SpecificVisible),
            agnostic_v: mk(&[&[0.0, 1.0], &[0.0, -1.0]], BankKind::AgnosticVisibleBased),
            specific_r: mk(&[&[0.6, 0.8], &[0.8, 0.6]], BankKind::SpecificInfrared),
            agnostic_r: mk(
                &[&[1.0, 0.0], &[-1.0, 0.0]],
                BankKind::AgnosticInfraredBased,
            ),
        };
        let kl = |sa: [f64; 2], sb: [f64; 2]| {
            let sm = |s: [f64; 2]| {
                let z = s[0].exp() + s[1].exp();
                [s[0].exp() / z, s[1].exp() / z]
            };
            let (p, q) = (sm(sa), sm(sb));
            0.5 * ((0..2).map(|k| p[k] * (p[k] / q[k]).ln()).sum::<f64>()
                + (0..2).map(|k| q[k] * (q[k] / p[k]).ln()).sum::<f64>())
        };
        let oracle = kl([1.0, 0.0], [0.0, 0.0]) + kl([0.6, 0.8], [1.0, -1.0]);
        let t = Triplet {
            v: vec![1.0, 0.0],
            vh: vec![1.0, 0.0],
            r: vec![1.0, 0.0],
            label_v: 0,
            label_r: 0,
            shared: true,
        };
        let got = l_cc(&[t], &banks, 1.0).unwrap();
        assert!(
            (got - 3.0 * oracle).abs() < 1e-14,
            "{got} vs {}",
            3.0 * oracle
        );
    }

    #[test]
    fn total_weights() {
        let banks = ideal_banks();
        let t = Triplet {
            v: vec![0.6, 0.8],
            vh: vec![0.8, 0.6],
            r: vec![0.0, 1.0],
            label_v: 0,
            label_r: 1,
            shared: true,
        };
        let batch = [t];
        let hp = HyperParams {
            alpha: 0.0,
            beta: 0.0,
            ..HyperParams::default()
        };
        let rep = total_loss(&batch, &banks, &hp).unwrap();
        assert_eq!(rep.total, rep.l_ms);
        let hp = HyperParams::default();
        let rep = total_loss(&batch, &banks, &hp).unwrap();
        let expect = l_ms(&batch, &banks, hp.tau).unwrap()
            + 0.9 * l_ma(&batch, &banks, hp.tau).unwrap()
            + 0.5 * l_cc(&batch, &banks, hp.tau).unwrap();
        assert!((rep.total - expect).abs() < 1e-9);
        let rep = total_loss_with(&batch, &banks, &hp, LossTerms::SPECIFIC_ONLY).unwrap();
        assert_eq!((rep.l_ma, rep.l_cc), (0.0, 0.0));
    }
}
