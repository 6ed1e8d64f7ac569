//! Prototype memory banks and their momentum updates.
//!
//! Four banks are kept per clustering round: a modality-specific bank for
//! each modality, fed only by that modality's instances, and two
//! modality-agnostic banks (one per cluster scale) fed by every instance
//! through the shared visible/infrared pseudo-label pair.

use crate::clustering::Centroids;
use crate::data::{normalize_row, EmbeddingSet, Matrix, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankKind {
    SpecificVisible,
    SpecificInfrared,
    AgnosticVisibleBased,
    AgnosticInfraredBased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    prototypes: Matrix,
    kind: BankKind,
    momentum: f64,
}

impl MemoryBank {
    pub fn new(prototypes: Matrix, kind: BankKind, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1], got {momentum}"
            )));
        }
        let mut prototypes = prototypes;
        for i in 0..prototypes.rows() {
            crate::data::ensure_unit_row(prototypes.row_mut(i), i)?;
        }
        Ok(MemoryBank {
            prototypes,
            kind,
            momentum,
        })
    }

    pub fn len(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> BankKind {
        self.kind
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn prototype(&self, k: usize) -> &[f64] {
        self.prototypes.row(k)
    }

    /// `c ← normalize(μ·c + (1−μ)·f)` on one slot.
    pub fn momentum_update(&mut self, slot: usize, feature: &[f64]) -> Result<()> {
        if slot >= self.len() {
            return Err(Error::SlotOutOfRange {
                slot,
                len: self.len(),
            });
        }
        let mu = self.momentum;
        if mu == 1.0 {
            return Ok(());
        }
        let row = self.prototypes.row_mut(slot);
        for (c, f) in row.iter_mut().zip(feature) {
            *c = mu * *c + (1.0 - mu) * f;
        }
        normalize_row(row, slot)
    }

    /// Prototypes as an embedding set (checkpoint/inspection in the `#dim`
    /// format).
    pub fn to_embedding_set(&self) -> Result<EmbeddingSet> {
        let modality = match self.kind {
            BankKind::SpecificVisible | BankKind::AgnosticVisibleBased => Modality::Visible,
            BankKind::SpecificInfrared | BankKind::AgnosticInfraredBased => Modality::Infrared,
        };
        EmbeddingSet::new(self.prototypes.clone(), modality, None)
    }
}

/// The four banks of one clustering round.
#[derive(Debug, Clone, PartialEq)]
pub struct Banks {
    pub specific_v: MemoryBank,
    pub specific_r: MemoryBank,
    pub agnostic_v: MemoryBank,
    pub agnostic_r: MemoryBank,
}

pub fn init_banks(cv: &Centroids, cr: &Centroids, mu: f64) -> Result<Banks> {
    Ok(Banks {
        specific_v: MemoryBank::new(cv.matrix.clone(), BankKind::SpecificVisible, mu)?,
        specific_r: MemoryBank::new(cr.matrix.clone(), BankKind::SpecificInfrared, mu)?,
        agnostic_v: MemoryBank::new(cv.matrix.clone(), BankKind::AgnosticVisibleBased, mu)?,
        agnostic_r: MemoryBank::new(cr.matrix.clone(), BankKind::AgnosticInfraredBased, mu)?,
    })
}

/// One instance to feed into the banks. `label_v` / `label_r` are the
/// instance's own pseudo-label and, when a matched pair supplies it, the
/// cross-modality one.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub feature: &'a [f64],
    pub modality: Modality,
    pub label_v: Option<usize>,
    pub label_r: Option<usize>,
}

/// Which banks an instance reaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingRule {
    /// Feed the modality-agnostic banks. Off when no cross-modality pairing
    /// exists (pretraining, baseline).
    pub agnostic: bool,
    /// Let intermediate-modality instances update the infrared-based
    /// agnostic bank.
    pub intermediate_to_agnostic_r: bool,
}

impl Default for RoutingRule {
    fn default() -> Self {
        RoutingRule {
            agnostic: true,
            intermediate_to_agnostic_r: true,
        }
    }
}

pub fn route_update(banks: &mut Banks, inst: &Instance<'_>, rule: RoutingRule) -> Result<()> {
    let need_v = || {
        inst.label_v
            .ok_or(Error::MissingLabel("visible pseudo-label"))
    };
    let need_r = || {
        inst.label_r
            .ok_or(Error::MissingLabel("infrared pseudo-label"))
    };
    // Validate every label the rule needs before touching any bank.
    let own_v = match inst.modality {
        Modality::Visible | Modality::IntermediateVisible => Some(need_v()?),
        Modality::Infrared => None,
    };
    let own_r = match inst.modality {
        Modality::Infrared => Some(need_r()?),
        _ => None,
    };
    let agnostic = if rule.agnostic {
        let to_r =
            inst.modality != Modality::IntermediateVisible || rule.intermediate_to_agnostic_r;
        Some((need_v()?, if to_r { Some(need_r()?) } else { None }))
    } else {
        None
    };

    if let Some(v) = own_v {
        banks.specific_v.momentum_update(v, inst.feature)?;
    }
    if let Some(r) = own_r {
        banks.specific_r.momentum_update(r, inst.feature)?;
    }
    if let Some((v, r)) = agnostic {
        banks.agnostic_v.momentum_update(v, inst.feature)?;
        if let Some(r) = r {
            banks.agnostic_r.momentum_update(r, inst.feature)?;
        }
    }
    Ok(())
}
