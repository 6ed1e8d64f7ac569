//! Synthetic two-modality identity datasets with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{normalize_row, EmbeddingSet, Matrix, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_ids: usize,
    pub per_id_per_modality: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of the within-identity noise.
    pub intra_sigma: f64,
    /// Norm of the fixed per-identity offset applied to infrared samples.
    pub modality_shift: f64,
    /// Probability that an identity's visible samples form two sub-clusters.
    pub split_prob: f64,
    /// Norm of the offset between the two visible sub-cluster centres.
    pub split_offset: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_ids: 20,
            per_id_per_modality: 10,
            dim: 32,
            intra_sigma: 0.05,
            modality_shift: 0.3,
            split_prob: 0.3,
            split_offset: 0.8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_ids < 2 {
            return bad("n_ids must be >= 2");
        }
        if self.per_id_per_modality < 2 {
            return bad("per_id_per_modality must be >= 2");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        for (name, v) in [
            ("intra_sigma", self.intra_sigma),
            ("modality_shift", self.modality_shift),
            ("split_offset", self.split_offset),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.split_prob) {
            return bad("split_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Generated sets plus the latent structure they were drawn from.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub visible: EmbeddingSet,
    pub infrared: EmbeddingSet,
    /// Unit anchor per identity.
    pub anchors: Vec<Vec<f64>>,
    /// Per-identity infrared offset, each of norm `modality_shift`.
    pub shifts: Vec<Vec<f64>>,
    /// Whether each identity's visible samples were split in two.
    pub split: Vec<bool>,
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if normalize_row(&mut v, 0).is_ok() {
            v.iter_mut().for_each(|x| *x *= scale);
            return v;
        }
    }
}

pub fn generate_detailed(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;

    let anchors: Vec<Vec<f64>> = (0..cfg.n_ids)
        .map(|_| random_direction(&mut rng, d, 1.0))
        .collect();
    let shifts: Vec<Vec<f64>> = (0..cfg.n_ids)
        .map(|_| random_direction(&mut rng, d, cfg.modality_shift))
        .collect();
    let mut split = Vec::with_capacity(cfg.n_ids);
    let mut split_offsets = Vec::with_capacity(cfg.n_ids);
    for _ in 0..cfg.n_ids {
        let s = rng.gen_bool(cfg.split_prob);
        split.push(s);
        split_offsets.push(s.then(|| random_direction(&mut rng, d, cfg.split_offset)));
    }

    let noise = Normal::new(0.0, cfg.intra_sigma).expect("validated sigma");
    let per = cfg.per_id_per_modality;
    let total = cfg.n_ids * per;
    let mut vis = Vec::with_capacity(total * d);
    let mut ir = Vec::with_capacity(total * d);
    let mut ids = Vec::with_capacity(total);

    let sample = |centre: &[f64], out: &mut Vec<f64>, rng: &mut ChaCha8Rng| -> Result<()> {
        let mut x: Vec<f64> = centre.iter().map(|c| c + noise.sample(rng)).collect();
        normalize_row(&mut x, out.len() / d)?;
        out.extend_from_slice(&x);
        Ok(())
    };

    for k in 0..cfg.n_ids {
        let a = &anchors[k];
        let moved: Option<Vec<f64>> = split_offsets[k]
            .as_ref()
            .map(|o| a.iter().zip(o).map(|(x, y)| x + y).collect());
        for s in 0..per {
            // The second half of a split identity's samples sits around the
            // offset centre.
            let centre = match &moved {
                Some(m) if s >= per / 2 => m.as_slice(),
                _ => a.as_slice(),
            };
            sample(centre, &mut vis, &mut rng)?;
            ids.push(k as i64);
        }
        let shifted: Vec<f64> = a.iter().zip(&shifts[k]).map(|(x, y)| x + y).collect();
        for _ in 0..per {
            sample(&shifted, &mut ir, &mut rng)?;
        }
    }

    let visible = EmbeddingSet::new(
        Matrix::from_flat(total, d, vis),
        Modality::Visible,
        Some(ids.clone()),
    )?;
    let infrared = EmbeddingSet::new(
        Matrix::from_flat(total, d, ir),
        Modality::Infrared,
        Some(ids),
    )?;
    Ok(SynthData {
        visible,
        infrared,
        anchors,
        shifts,
        split,
    })
}

/// Visible and infrared sets for `cfg`; deterministic in `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let data = generate_detailed(cfg)?;
    Ok((data.visible, data.infrared))
}
