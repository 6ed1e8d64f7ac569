//! Command-line front end.
//!
//! Every flag can also be set through an `XMM_`-prefixed environment
//! variable (`--min-pts` ↔ `XMM_MIN_PTS`). Exit status is 0 on success, 1 on
//! usage errors and 2 on data errors.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{centroids, dbscan, DEFAULT_EPS, DEFAULT_MIN_PTS};
use crate::data::{load_embeddings, Modality};
use crate::error::{Error, Result};
use crate::eval::{match_quality, positive_distance_histogram, retrieve_and_score};
use crate::matching::{match_clusters, MatchMode};
use crate::objective::HyperParams;
use crate::synth::{generate, SynthConfig};
use crate::trainer::{metrics_log_text, run, Ablation, TrainConfig, TrainSets};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const METRICS_FILE: &str = "metrics.log";

#[derive(Parser, Debug)]
#[command(
    name = "xmm",
    version,
    about = "Cross-modality cluster matching toolkit"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true, env = "XMM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic visible/infrared dataset.
    Generate(GenerateArgs),
    /// DBSCAN one embedding file into pseudo-labels.
    Cluster(ClusterArgs),
    /// Cluster both modalities and write the matched cluster pairs.
    Match(MatchArgs),
    /// Train embeddings and write them with a metrics log and manifest.
    Train(TrainArgs),
    /// Cross-modality retrieval metrics.
    Eval(EvalArgs),
    /// Positive-pair distance histogram.
    Hist(HistArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, env = "XMM_OUT_DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 20, env = "XMM_N_IDS")]
    n_ids: usize,
    #[arg(long, default_value_t = 10, env = "XMM_PER_ID")]
    per_id: usize,
    #[arg(long, default_value_t = 32, env = "XMM_DIM")]
    dim: usize,
    #[arg(long, default_value_t = 0.05, env = "XMM_INTRA_SIGMA")]
    intra_sigma: f64,
    #[arg(long, default_value_t = 0.3, env = "XMM_MODALITY_SHIFT")]
    modality_shift: f64,
    #[arg(long, default_value_t = 0.3, env = "XMM_SPLIT_PROB")]
    split_prob: f64,
    #[arg(long, default_value_t = 0.8, env = "XMM_SPLIT_OFFSET")]
    split_offset: f64,
    #[arg(long, default_value_t = 0, env = "XMM_SEED")]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModalityArg {
    V,
    R,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::V => Modality::Visible,
            ModalityArg::R => Modality::Infrared,
        }
    }
}

#[derive(Args, Debug)]
struct ClusterParams {
    #[arg(long, default_value_t = DEFAULT_EPS, env = "XMM_EPS")]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_PTS, env = "XMM_MIN_PTS")]
    min_pts: usize,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long, env = "XMM_INPUT")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "v", env = "XMM_MODALITY")]
    modality: ModalityArg,
    #[command(flatten)]
    params: ClusterParams,
    /// Output file; stdout when omitted.
    #[arg(long, env = "XMM_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long, env = "XMM_VISIBLE")]
    visible: PathBuf,
    #[arg(long, env = "XMM_INFRARED")]
    infrared: PathBuf,
    #[command(flatten)]
    params: ClusterParams,
    /// bccm, mbccm, or argmin (per-row argmin anchors, debugging only).
    #[arg(long, default_value = "mbccm", env = "XMM_MODE")]
    mode: MatchMode,
    /// Pair list output; stdout when omitted. Match quality is written next
    /// to it with a `.quality` extension when both files carry ids.
    #[arg(long, env = "XMM_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Re-run the configuration and inputs recorded in a manifest.
    #[arg(long, env = "XMM_MANIFEST", conflicts_with_all = ["visible", "infrared"])]
    manifest: Option<PathBuf>,
    #[arg(long, env = "XMM_VISIBLE", required_unless_present = "manifest")]
    visible: Option<PathBuf>,
    #[arg(long, env = "XMM_INFRARED", required_unless_present = "manifest")]
    infrared: Option<PathBuf>,
    #[arg(long, env = "XMM_OUT_DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 30, env = "XMM_EPOCHS")]
    epochs: usize,
    #[arg(long, default_value_t = 10, env = "XMM_PRETRAIN_EPOCHS")]
    pretrain_epochs: usize,
    #[arg(long, default_value_t = 12, env = "XMM_IDS_PER_BATCH")]
    ids_per_batch: usize,
    #[arg(long, default_value_t = 12, env = "XMM_INSTANCES_PER_ID")]
    instances_per_id: usize,
    /// 4 identities × 4 instances per batch.
    #[arg(long, env = "XMM_DESK")]
    desk: bool,
    #[arg(long, default_value_t = 3.5e-4, env = "XMM_LR")]
    lr: f64,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "20,50,70",
        env = "XMM_LR_DECAY_EPOCHS"
    )]
    lr_decay_epochs: Vec<usize>,
    #[arg(long, default_value_t = 10.0, env = "XMM_LR_DECAY_FACTOR")]
    lr_decay_factor: f64,
    /// baseline, bccm_msma, mbccm_msma or full.
    #[arg(long, default_value = "full", env = "XMM_ABLATION")]
    ablation: Ablation,
    #[arg(long, default_value_t = 0.05, env = "XMM_TAU")]
    tau: f64,
    #[arg(long, default_value_t = 0.1, env = "XMM_MU")]
    mu: f64,
    #[arg(long, default_value_t = 0.9, env = "XMM_ALPHA")]
    alpha: f64,
    #[arg(long, default_value_t = 0.5, env = "XMM_BETA")]
    beta: f64,
    #[command(flatten)]
    params: ClusterParams,
    #[arg(long, default_value_t = 0, env = "XMM_SEED")]
    seed: u64,
    #[arg(long, default_value_t = 0.05, env = "XMM_INTERMEDIATE_SIGMA")]
    intermediate_sigma: f64,
    /// Carry memory banks across epochs when cluster counts are unchanged.
    #[arg(long, env = "XMM_KEEP_BANKS")]
    keep_banks: bool,
    /// Stop intermediate instances from updating the infrared-based agnostic bank.
    #[arg(long, env = "XMM_NO_INTERMEDIATE_AGNOSTIC_R")]
    no_intermediate_agnostic_r: bool,
    /// Per-row argmin anchors instead of assignment rounds.
    #[arg(long, env = "XMM_ARGMIN_MATCHING")]
    argmin_matching: bool,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let cfg = TrainConfig {
            epochs: self.epochs,
            pretrain_epochs: self.pretrain_epochs,
            ids_per_batch: self.ids_per_batch,
            instances_per_id: self.instances_per_id,
            lr: self.lr,
            lr_decay_epochs: self.lr_decay_epochs.clone(),
            lr_decay_factor: self.lr_decay_factor,
            ablation: self.ablation,
            hp: HyperParams {
                tau: self.tau,
                alpha: self.alpha,
                beta: self.beta,
                mu: self.mu,
            },
            eps: self.params.eps,
            min_pts: self.params.min_pts,
            seed: self.seed,
            intermediate_sigma: self.intermediate_sigma,
            rebuild_banks: !self.keep_banks,
            intermediate_to_agnostic_r: !self.no_intermediate_agnostic_r,
            argmin_matching: self.argmin_matching,
        };
        if self.desk {
            cfg.desk()
        } else {
            cfg
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, env = "XMM_QUERY")]
    query: PathBuf,
    #[arg(long, env = "XMM_GALLERY")]
    gallery: PathBuf,
    #[arg(long, value_enum, default_value = "v", env = "XMM_QUERY_MODALITY")]
    query_modality: ModalityArg,
    #[arg(long, env = "XMM_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HistArgs {
    #[arg(long, env = "XMM_VISIBLE")]
    visible: PathBuf,
    #[arg(long, env = "XMM_INFRARED")]
    infrared: PathBuf,
    #[arg(long, default_value_t = 10_000, env = "XMM_PAIRS")]
    pairs: usize,
    #[arg(long, default_value_t = 40, env = "XMM_BINS")]
    bins: usize,
    #[arg(long, default_value_t = 0, env = "XMM_SEED")]
    seed: u64,
    #[arg(long, env = "XMM_OUT")]
    out: Option<PathBuf>,
}

/// Input file with its content digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to reproduce a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            synth: None,
            train: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::ParseError {
            line: 0,
            msg: format!("manifest: {e}"),
        })
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Io(format!("manifest: {e}")))?;
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_ids: a.n_ids,
        per_id_per_modality: a.per_id,
        dim: a.dim,
        intra_sigma: a.intra_sigma,
        modality_shift: a.modality_shift,
        split_prob: a.split_prob,
        split_offset: a.split_offset,
        seed: a.seed,
    };
    let (v, r) = generate(&cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    v.save(a.out_dir.join("visible.emb"))?;
    r.save(a.out_dir.join("infrared.emb"))?;
    let mut m = RunManifest::new("generate");
    m.synth = Some(cfg);
    m.artifacts = vec!["visible.emb".into(), "infrared.emb".into()];
    m.save(&a.out_dir)
}

fn cmd_cluster(a: &ClusterArgs) -> Result<()> {
    let set = load_embeddings(&a.input, a.modality.into())?;
    let labels = dbscan(&set, a.params.eps, a.params.min_pts)?;
    write_out(a.out.as_deref(), &labels.to_text())
}

fn cmd_match(a: &MatchArgs) -> Result<()> {
    let v = load_embeddings(&a.visible, Modality::Visible)?;
    let r = load_embeddings(&a.infrared, Modality::Infrared)?;
    let lv = dbscan(&v, a.params.eps, a.params.min_pts)?;
    let lr = dbscan(&r, a.params.eps, a.params.min_pts)?;
    let m = match_clusters(&centroids(&v, &lv)?, &centroids(&r, &lr)?, a.mode)?;
    write_out(a.out.as_deref(), &m.to_pair_list())?;
    if v.ids().is_some() && r.ids().is_some() {
        let q = match_quality(&m, &lv, &lr, v.ids(), r.ids())?;
        match &a.out {
            Some(p) => std::fs::write(p.with_extension("quality"), q.to_text())?,
            None => eprint!("{}", q.to_text()),
        }
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (cfg, visible_path, infrared_path, expected) = match &a.manifest {
        Some(path) => {
            let m = RunManifest::load(path)?;
            let cfg = m
                .train
                .ok_or_else(|| Error::InvalidConfig("manifest has no train section".into()))?;
            let [v, r]: [InputRecord; 2] = m.inputs.try_into().map_err(|_| {
                Error::InvalidConfig("manifest must list exactly two inputs".into())
            })?;
            (cfg, v.path, r.path, Some((v.sha256, r.sha256)))
        }
        None => (
            a.config(),
            a.visible.clone().expect("required by clap"),
            a.infrared.clone().expect("required by clap"),
            None,
        ),
    };
    let digests = (sha256_file(&visible_path)?, sha256_file(&infrared_path)?);
    if let Some(expected) = expected {
        if expected != digests {
            return Err(Error::InvalidConfig(
                "input digests differ from the manifest".into(),
            ));
        }
    }
    let visible = load_embeddings(&visible_path, Modality::Visible)?;
    let infrared = load_embeddings(&infrared_path, Modality::Infrared)?;
    let sets = TrainSets::derive(visible, infrared, &cfg)?;
    let out = run(&sets, &cfg)?;

    std::fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    out.visible.save(dir.join("visible.emb"))?;
    out.intermediate.save(dir.join("intermediate.emb"))?;
    out.infrared.save(dir.join("infrared.emb"))?;
    std::fs::write(dir.join(METRICS_FILE), metrics_log_text(&out.log))?;
    std::fs::write(dir.join("epochs.log"), out.epoch_summary_text())?;

    let mut m = RunManifest::new("train");
    m.inputs = vec![
        InputRecord {
            path: visible_path,
            sha256: digests.0,
        },
        InputRecord {
            path: infrared_path,
            sha256: digests.1,
        },
    ];
    m.train = Some(cfg);
    m.artifacts = [
        "visible.emb",
        "intermediate.emb",
        "infrared.emb",
        METRICS_FILE,
        "epochs.log",
    ]
    .map(String::from)
    .to_vec();
    m.save(dir)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let qm: Modality = a.query_modality.into();
    let gm = if qm == Modality::Visible {
        Modality::Infrared
    } else {
        Modality::Visible
    };
    let q = load_embeddings(&a.query, qm)?;
    let g = load_embeddings(&a.gallery, gm)?;
    write_out(a.out.as_deref(), &retrieve_and_score(&q, &g)?.to_text())
}

fn cmd_hist(a: &HistArgs) -> Result<()> {
    let v = load_embeddings(&a.visible, Modality::Visible)?;
    let r = load_embeddings(&a.infrared, Modality::Infrared)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let h = positive_distance_histogram(&v, &r, a.pairs, a.bins, &mut rng)?;
    write_out(a.out.as_deref(), &h.to_text())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Match(a) => cmd_match(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Hist(a) => cmd_hist(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
