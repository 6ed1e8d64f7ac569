//! Epoch loop: cluster each modality, match clusters across modalities,
//! sample matched batches, take gradient steps on the embedding tables and
//! feed the memory banks.
//!
//! The embeddings themselves are the trainable parameters. After every step
//! each touched row is moved against its gradient and projected back onto
//! the unit sphere.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{centroids, dbscan, DEFAULT_EPS, DEFAULT_MIN_PTS};
use crate::data::{make_intermediate, normalize_row, EmbeddingSet, Matrix, Modality, PseudoLabels};
use crate::error::{Error, Result};
use crate::eval::{match_quality, retrieve_and_score, MatchQuality};
use crate::matching::{match_clusters, MatchMode, MatchResult};
use crate::memory::{init_banks, route_update, Banks, Instance, RoutingRule};
use crate::objective::{total_loss_with, HyperParams, LossTerms, Triplet};

/// Which components of the method are active once matching starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Per-modality training only; clusters are never matched.
    Baseline,
    /// One-to-one matching, specific and agnostic banks.
    BccmMsma,
    /// Many-to-many matching, specific and agnostic banks.
    MbccmMsma,
    /// Many-to-many matching, both bank families and the consistency term.
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Baseline,
        Ablation::BccmMsma,
        Ablation::MbccmMsma,
        Ablation::Full,
    ];

    pub fn match_mode(self) -> Option<MatchMode> {
        match self {
            Ablation::Baseline => None,
            Ablation::BccmMsma => Some(MatchMode::Bccm),
            Ablation::MbccmMsma | Ablation::Full => Some(MatchMode::Mbccm),
        }
    }

    pub fn loss_terms(self) -> LossTerms {
        match self {
            Ablation::Baseline => LossTerms::SPECIFIC_ONLY,
            Ablation::BccmMsma | Ablation::MbccmMsma => LossTerms {
                agnostic: true,
                consistency: false,
            },
            Ablation::Full => LossTerms::ALL,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "baseline" => Ok(Ablation::Baseline),
            "bccm_msma" => Ok(Ablation::BccmMsma),
            "mbccm_msma" => Ok(Ablation::MbccmMsma),
            "full" => Ok(Ablation::Full),
            other => Err(format!(
                "unknown ablation `{other}` (expected baseline, bccm_msma, mbccm_msma or full)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Leading epochs trained per modality without matching.
    pub pretrain_epochs: usize,
    pub ids_per_batch: usize,
    pub instances_per_id: usize,
    pub lr: f64,
    /// Epochs at whose start the learning rate is divided by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub ablation: Ablation,
    pub hp: HyperParams,
    pub eps: f64,
    pub min_pts: usize,
    pub seed: u64,
    /// Noise level of the intermediate stream derived from the visible set.
    pub intermediate_sigma: f64,
    /// Rebuild banks from fresh centroids every epoch. When off, banks carry
    /// over whenever both cluster counts are unchanged.
    pub rebuild_banks: bool,
    /// Let intermediate instances update the infrared-based agnostic bank.
    pub intermediate_to_agnostic_r: bool,
    /// Replace assignment rounds by per-row argmin anchors (debugging).
    pub argmin_matching: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            pretrain_epochs: 10,
            ids_per_batch: 12,
            instances_per_id: 12,
            lr: 3.5e-4,
            lr_decay_epochs: vec![20, 50, 70],
            lr_decay_factor: 10.0,
            ablation: Ablation::Full,
            hp: HyperParams::default(),
            eps: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
            seed: 0,
            intermediate_sigma: 0.05,
            rebuild_banks: true,
            intermediate_to_agnostic_r: true,
            argmin_matching: false,
        }
    }
}

impl TrainConfig {
    /// Scaled-down batch geometry (4 identities × 4 instances).
    pub fn desk(mut self) -> Self {
        self.ids_per_batch = 4;
        self.instances_per_id = 4;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.pretrain_epochs > self.epochs {
            return bad(format!(
                "pretrain_epochs {} exceeds epochs {}",
                self.pretrain_epochs, self.epochs
            ));
        }
        if self.ids_per_batch == 0 || self.instances_per_id == 0 {
            return bad("ids_per_batch and instances_per_id must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad("lr_decay_factor must be positive".into());
        }
        if !(self.eps > 0.0) || self.min_pts == 0 {
            return bad("eps must be positive and min_pts >= 1".into());
        }
        if !(self.intermediate_sigma >= 0.0) {
            return bad("intermediate_sigma must be >= 0".into());
        }
        self.hp.validate()
    }

    pub fn batch_size(&self) -> usize {
        self.ids_per_batch * self.instances_per_id
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr / self.lr_decay_factor.powi(decays as i32)
    }

    /// Whether clusters are matched (and cross-modality terms active) in
    /// `epoch`.
    pub fn matched_at(&self, epoch: usize) -> bool {
        epoch >= self.pretrain_epochs && self.ablation != Ablation::Baseline
    }
}

/// Indices of one sampled triplet. `vh` shares the visible row index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledTriplet {
    pub v: usize,
    pub r: usize,
    pub label_v: usize,
    pub label_r: usize,
    pub shared: bool,
}

fn draw_members<R: Rng>(members: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    if members.len() >= count {
        sample_indices(rng, members.len(), count)
            .into_iter()
            .map(|i| members[i])
            .collect()
    } else {
        (0..count)
            .map(|_| members[rng.gen_range(0..members.len())])
            .collect()
    }
}

fn draw_distinct<R: Rng>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if n >= count {
        sample_indices(rng, n, count).into_vec()
    } else {
        (0..count).map(|_| rng.gen_range(0..n)).collect()
    }
}

/// Draws `ids_per_batch` cluster pairs and `instances_per_id` instances per
/// side of each pair. With a match, pairs are true entries of `q` and share
/// their labels; without one, visible and infrared clusters are drawn
/// independently.
pub fn sample_batch<R: Rng>(
    labels_v: &PseudoLabels,
    labels_r: &PseudoLabels,
    matched: Option<&MatchResult>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<SampledTriplet>> {
    let members_v = labels_v.members();
    let members_r = labels_r.members();
    let pairs: Vec<(usize, usize, bool)> = match matched {
        Some(m) => {
            let all = m.q.pairs();
            if all.is_empty() {
                return Err(Error::EmptyMatch);
            }
            draw_distinct(all.len(), cfg.ids_per_batch, rng)
                .into_iter()
                .map(|i| (all[i].0, all[i].1, true))
                .collect()
        }
        None => {
            let a = draw_distinct(members_v.len(), cfg.ids_per_batch, rng);
            let b = draw_distinct(members_r.len(), cfg.ids_per_batch, rng);
            a.into_iter().zip(b).map(|(a, b)| (a, b, false)).collect()
        }
    };
    let mut out = Vec::with_capacity(cfg.batch_size());
    for (a, b, shared) in pairs {
        let vs = draw_members(&members_v[a], cfg.instances_per_id, rng);
        let rs = draw_members(&members_r[b], cfg.instances_per_id, rng);
        for (v, r) in vs.into_iter().zip(rs) {
            out.push(SampledTriplet {
                v,
                r,
                label_v: a,
                label_r: b,
                shared,
            });
        }
    }
    Ok(out)
}

/// The three trainable embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub visible: Matrix,
    pub intermediate: Matrix,
    pub infrared: Matrix,
    ids_v: Option<Vec<i64>>,
    ids_r: Option<Vec<i64>>,
}

impl Tables {
    pub fn new(
        visible: &EmbeddingSet,
        intermediate: &EmbeddingSet,
        infrared: &EmbeddingSet,
    ) -> Result<Self> {
        if visible.dim() != infrared.dim() || visible.dim() != intermediate.dim() {
            return Err(Error::DimMismatch {
                expected: visible.dim(),
                found: infrared.dim(),
            });
        }
        if intermediate.len() != visible.len() {
            return Err(Error::InvalidConfig(
                "intermediate set must pair 1:1 with the visible set".into(),
            ));
        }
        Ok(Tables {
            visible: visible.vectors().clone(),
            intermediate: intermediate.vectors().clone(),
            infrared: infrared.vectors().clone(),
            ids_v: visible.ids().map(<[i64]>::to_vec),
            ids_r: infrared.ids().map(<[i64]>::to_vec),
        })
    }

    pub fn visible_set(&self) -> Result<EmbeddingSet> {
        EmbeddingSet::new(self.visible.clone(), Modality::Visible, self.ids_v.clone())
    }

    pub fn intermediate_set(&self) -> Result<EmbeddingSet> {
        EmbeddingSet::new(
            self.intermediate.clone(),
            Modality::IntermediateVisible,
            self.ids_v.clone(),
        )
    }

    pub fn infrared_set(&self) -> Result<EmbeddingSet> {
        EmbeddingSet::new(
            self.infrared.clone(),
            Modality::Infrared,
            self.ids_r.clone(),
        )
    }

    fn triplet(&self, s: &SampledTriplet) -> Triplet {
        Triplet {
            v: self.visible.row(s.v).to_vec(),
            vh: self.intermediate.row(s.v).to_vec(),
            r: self.infrared.row(s.r).to_vec(),
            label_v: s.label_v,
            label_r: s.label_r,
            shared: s.shared,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_ms: f64,
    pub l_ma: f64,
    pub l_cc: f64,
    pub total: f64,
    pub k_v: usize,
    pub k_r: usize,
}

impl StepRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {} {}",
            self.epoch, self.step, self.l_ms, self.l_ma, self.l_cc, self.total, self.k_v, self.k_r
        )
    }
}

/// `epoch step l_ms l_ma l_cc total K_v K_r`, one record per line.
pub fn metrics_log_text(records: &[StepRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

/// Per-epoch summary, including ground-truth diagnostics when ids exist.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub k_v: usize,
    pub k_r: usize,
    pub noise_v: usize,
    pub noise_r: usize,
    pub matched_pairs: usize,
    pub mean_l_ms: f64,
    pub mean_l_ma: f64,
    pub mean_l_cc: f64,
    pub mean_total: f64,
    pub quality: Option<MatchQuality>,
}

impl EpochSummary {
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "epoch={} lr={} k_v={} k_r={} noise_v={} noise_r={} pairs={} l_ms={} l_ma={} l_cc={} total={}",
            self.epoch,
            self.lr,
            self.k_v,
            self.k_r,
            self.noise_v,
            self.noise_r,
            self.matched_pairs,
            self.mean_l_ms,
            self.mean_l_ma,
            self.mean_l_cc,
            self.mean_total
        );
        if let Some(q) = &self.quality {
            write!(
                s,
                " pair_precision={} pair_recall={}",
                q.pair_precision, q.pair_recall
            )
            .unwrap();
        }
        s
    }
}

/// Everything one epoch works from.
#[derive(Debug, Clone)]
pub struct EpochState {
    pub labels_v: PseudoLabels,
    pub labels_r: PseudoLabels,
    /// Present iff the epoch is past pretraining and the ablation matches.
    pub matched: Option<MatchResult>,
    pub banks: Banks,
}

/// Runs ⌈N / batch size⌉ steps over the current clustering.
pub fn train_epoch<R: Rng>(
    state: &mut EpochState,
    tables: &mut Tables,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
    rng: &mut R,
) -> Result<Vec<StepRecord>> {
    let n = tables.visible.rows().max(tables.infrared.rows());
    let steps = n.div_ceil(cfg.batch_size());
    let terms = if state.matched.is_some() {
        cfg.ablation.loss_terms()
    } else {
        LossTerms::SPECIFIC_ONLY
    };
    let rule = RoutingRule {
        agnostic: state.matched.is_some(),
        intermediate_to_agnostic_r: cfg.intermediate_to_agnostic_r,
    };
    let d = tables.visible.cols();
    let (k_v, k_r) = (
        state.labels_v.cluster_count(),
        state.labels_r.cluster_count(),
    );
    let mut records = Vec::with_capacity(steps);

    for step in 0..steps {
        let sampled = sample_batch(
            &state.labels_v,
            &state.labels_r,
            state.matched.as_ref(),
            cfg,
            rng,
        )?;
        let batch: Vec<Triplet> = sampled.iter().map(|s| tables.triplet(s)).collect();
        let report = total_loss_with(&batch, &state.banks, &cfg.hp, terms)?;

        // Gradients of repeated rows accumulate before the step.
        let mut gv = vec![0.0; tables.visible.rows() * d];
        let mut gh = vec![0.0; tables.intermediate.rows() * d];
        let mut gr = vec![0.0; tables.infrared.rows() * d];
        for (s, g) in sampled.iter().zip(&report.grads) {
            let add = |acc: &mut [f64], row: usize, src: &[f64]| {
                acc[row * d..(row + 1) * d]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, b)| *a += b);
            };
            add(&mut gv, s.v, &g.v);
            add(&mut gh, s.v, &g.vh);
            add(&mut gr, s.r, &g.r);
        }
        if lr > 0.0 {
            let mut touched_v: Vec<usize> = sampled.iter().map(|s| s.v).collect();
            let mut touched_r: Vec<usize> = sampled.iter().map(|s| s.r).collect();
            touched_v.sort_unstable();
            touched_v.dedup();
            touched_r.sort_unstable();
            touched_r.dedup();
            for &i in &touched_v {
                apply_step(&mut tables.visible, i, &gv[i * d..(i + 1) * d], lr)?;
                apply_step(&mut tables.intermediate, i, &gh[i * d..(i + 1) * d], lr)?;
            }
            for &j in &touched_r {
                apply_step(&mut tables.infrared, j, &gr[j * d..(j + 1) * d], lr)?;
            }
        }

        for s in &sampled {
            let cross_r = s.shared.then_some(s.label_r);
            let cross_v = s.shared.then_some(s.label_v);
            let items = [
                (
                    tables.visible.row(s.v),
                    Modality::Visible,
                    Some(s.label_v),
                    cross_r,
                ),
                (
                    tables.intermediate.row(s.v),
                    Modality::IntermediateVisible,
                    Some(s.label_v),
                    cross_r,
                ),
                (
                    tables.infrared.row(s.r),
                    Modality::Infrared,
                    cross_v,
                    Some(s.label_r),
                ),
            ];
            for (feature, modality, label_v, label_r) in items {
                route_update(
                    &mut state.banks,
                    &Instance {
                        feature,
                        modality,
                        label_v,
                        label_r,
                    },
                    rule,
                )?;
            }
        }

        records.push(StepRecord {
            epoch,
            step,
            l_ms: report.l_ms,
            l_ma: report.l_ma,
            l_cc: report.l_cc,
            total: report.total,
            k_v,
            k_r,
        });
    }
    Ok(records)
}

fn apply_step(table: &mut Matrix, row: usize, grad: &[f64], lr: f64) -> Result<()> {
    let r = table.row_mut(row);
    r.iter_mut().zip(grad).for_each(|(x, g)| *x -= lr * g);
    normalize_row(r, row)
}

/// Input to [`run`]: the two modalities plus the intermediate stream.
#[derive(Debug, Clone)]
pub struct TrainSets {
    pub visible: EmbeddingSet,
    pub intermediate: EmbeddingSet,
    pub infrared: EmbeddingSet,
}

impl TrainSets {
    /// Derives the intermediate stream from `visible` with the config's noise
    /// level and seed.
    pub fn derive(
        visible: EmbeddingSet,
        infrared: EmbeddingSet,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let intermediate = make_intermediate(
            &visible,
            cfg.intermediate_sigma,
            cfg.seed ^ 0x9E37_79B9_7F4A_7C15,
        )?;
        Ok(TrainSets {
            visible,
            intermediate,
            infrared,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub visible: EmbeddingSet,
    pub intermediate: EmbeddingSet,
    pub infrared: EmbeddingSet,
    pub log: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
    /// Visible and infrared embeddings when pretraining ended (before the
    /// first matched epoch). `None` when there is no pretraining.
    pub after_pretrain: Option<(EmbeddingSet, EmbeddingSet)>,
}

impl RunOutput {
    pub fn epoch_summary_text(&self) -> String {
        self.epochs.iter().map(|e| e.to_line() + "\n").collect()
    }

    /// Cross-modality retrieval (visible queries, infrared gallery) when
    /// ground truth is present.
    pub fn final_map(&self) -> Option<f64> {
        retrieve_and_score(&self.visible, &self.infrared)
            .ok()
            .map(|r| r.map)
    }
}

fn cluster(
    set: &EmbeddingSet,
    cfg: &TrainConfig,
    epoch: usize,
    modality: Modality,
) -> Result<PseudoLabels> {
    dbscan(set, cfg.eps, cfg.min_pts).map_err(|e| match e {
        Error::NoClusters => Error::NoClustersAt { epoch, modality },
        other => other,
    })
}

/// Full schedule: for every epoch recluster, (re)build banks, optionally
/// match, then train.
pub fn run(sets: &TrainSets, cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut tables = Tables::new(&sets.visible, &sets.intermediate, &sets.infrared)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut after_pretrain = None;
    let mut prev_banks: Option<Banks> = None;

    for epoch in 0..cfg.epochs {
        if epoch == cfg.pretrain_epochs && epoch > 0 {
            after_pretrain = Some((tables.visible_set()?, tables.infrared_set()?));
        }
        let visible = tables.visible_set()?;
        let infrared = tables.infrared_set()?;
        let labels_v = cluster(&visible, cfg, epoch, Modality::Visible)?;
        let labels_r = cluster(&infrared, cfg, epoch, Modality::Infrared)?;
        let cv = centroids(&visible, &labels_v)?;
        let cr = centroids(&infrared, &labels_r)?;

        let matched = match cfg.ablation.match_mode() {
            Some(mode) if cfg.matched_at(epoch) => {
                let mode = if cfg.argmin_matching {
                    MatchMode::Argmin
                } else {
                    mode
                };
                Some(match_clusters(&cv, &cr, mode)?)
            }
            _ => None,
        };
        let banks = match prev_banks.take() {
            Some(b)
                if !cfg.rebuild_banks
                    && b.specific_v.len() == cv.len()
                    && b.specific_r.len() == cr.len() =>
            {
                b
            }
            _ => init_banks(&cv, &cr, cfg.hp.mu)?,
        };
        let quality = matched.as_ref().and_then(|m| {
            match_quality(m, &labels_v, &labels_r, visible.ids(), infrared.ids()).ok()
        });
        let matched_pairs = matched.as_ref().map_or(0, |m| m.q.count());

        let mut state = EpochState {
            labels_v,
            labels_r,
            matched,
            banks,
        };
        let lr = cfg.lr_at(epoch);
        let records = train_epoch(&mut state, &mut tables, cfg, epoch, lr, &mut rng)?;

        let mean = |f: fn(&StepRecord) -> f64| {
            records.iter().map(f).sum::<f64>() / records.len().max(1) as f64
        };
        epochs.push(EpochSummary {
            epoch,
            lr,
            k_v: state.labels_v.cluster_count(),
            k_r: state.labels_r.cluster_count(),
            noise_v: state.labels_v.noise_count(),
            noise_r: state.labels_r.noise_count(),
            matched_pairs,
            mean_l_ms: mean(|r| r.l_ms),
            mean_l_ma: mean(|r| r.l_ma),
            mean_l_cc: mean(|r| r.l_cc),
            mean_total: mean(|r| r.total),
            quality,
        });
        log.extend(records);
        prev_banks = Some(state.banks);
    }
    if after_pretrain.is_none() && cfg.pretrain_epochs == cfg.epochs && cfg.epochs > 0 {
        after_pretrain = Some((tables.visible_set()?, tables.infrared_set()?));
    }

    Ok(RunOutput {
        visible: tables.visible_set()?,
        intermediate: tables.intermediate_set()?,
        infrared: tables.infrared_set()?,
        log,
        epochs,
        after_pretrain,
    })
}
