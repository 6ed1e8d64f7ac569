//! Runs the four ablations on one synthetic benchmark and prints the final
//! cross-modality mAP of each.
//!
//! ```text
//! cargo run --release --example ablation -- [seed] [per_id] [split_offset] [eps] [min_pts] [lr] [pretrain]
//! ```

use std::time::Instant;

use xmm::synth::{generate, SynthConfig};
use xmm::trainer::{run, Ablation, TrainConfig, TrainSets};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> xmm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let synth = SynthConfig {
        seed: arg(&args, 1, 0),
        per_id_per_modality: arg(&args, 2, 10),
        split_offset: arg(&args, 3, 0.8),
        ..SynthConfig::default()
    };
    let (v, r) = generate(&synth)?;
    for ablation in Ablation::ALL {
        let cfg = TrainConfig {
            ablation,
            eps: arg(&args, 4, 0.6),
            min_pts: arg(&args, 5, 4),
            lr: arg(&args, 6, 0.1),
            pretrain_epochs: arg(&args, 7, 10),
            seed: synth.seed,
            ..TrainConfig::default().desk()
        };
        let start = Instant::now();
        let sets = TrainSets::derive(v.clone(), r.clone(), &cfg)?;
        let out = run(&sets, &cfg)?;
        let last = out.epochs.last().expect("at least one epoch");
        let precision = last.quality.as_ref().map_or(f64::NAN, |q| q.pair_precision);
        println!(
            "{ablation:?}: map={:.6} precision={precision:.3} k_v={} k_r={} ({:.1?})",
            out.final_map().unwrap_or(f64::NAN),
            last.k_v,
            last.k_r,
            start.elapsed()
        );
    }
    Ok(())
}
