//! Command-line entry point: corpus generation, chain and benchmark
//! construction, training, evaluation, component audits, and the gradient
//! check, all as pure functions of (input files, config, seed).
//!
//! Every run writes the fully-resolved flat `key = value` config into its
//! output directory. Exit codes: 0 success, 1 usage, 2 data/validation,
//! 3 numeric failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::datamodel::{gen_synthetic_corpus, load_corpus, save_corpus, save_corpus_with_sidecar, GenConfig, Lexicons};
use crate::encoders::{encode_text, encode_video, EncoderConfig};
use crate::evalsuite::{build_lvdr, eval_lvdr, eval_retrieval, LvdrSubset, RecallAtK, SubsetScores};
use crate::gradcheck::{grad_check, random_instance};
use crate::losses::LossConfig;
use crate::numerics;
use crate::pce;
use crate::perturb::{chains_for_corpus, load_chains, save_chains, PerturbConfig};
use crate::pipeline::fit_batch_basis;
use crate::trainer::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainData};
use crate::{Error, Result};

// ── Resolved run configuration ─────────────────────────────────────────

/// Flat run configuration: defaults, overlaid by a `key = value` config
/// file, overlaid by command-line flags. Unknown file keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // generator
    pub n_samples: usize,
    pub n_frames: usize,
    pub d_in: usize,
    pub noise_std: f64,
    // encoders
    pub vocab: usize,
    pub d_embed: usize,
    pub d: usize,
    // perturbation / benchmark
    pub m: usize,
    pub q: usize,
    pub p: usize,
    pub q_values: Vec<usize>,
    // loss
    pub tau: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha_d: f64,
    pub alpha_h: f64,
    // trainer
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: u64,
    pub max_lr: f64,
    pub weight_decay: f64,
    pub baseline_longclip: bool,
    pub fixed_k: usize,
    // evaluation
    pub ks: Vec<usize>,
    // shared
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = GenConfig::default();
        let loss = LossConfig::default();
        let tr = TrainConfig::default();
        Self {
            n_samples: gen.n_samples,
            n_frames: gen.n_frames,
            d_in: gen.d_in,
            noise_std: gen.noise_std,
            vocab: 4096,
            d_embed: 32,
            d: 64,
            m: loss.m,
            q: 1,
            p: 4,
            q_values: vec![1, 2, 3, 4, 5],
            tau: loss.tau,
            alpha1: loss.alpha1,
            alpha2: loss.alpha2,
            alpha3: loss.alpha3,
            alpha_d: loss.alpha_d,
            alpha_h: loss.alpha_h,
            batch_size: tr.batch_size,
            epochs: tr.epochs,
            warmup_steps: tr.warmup_steps,
            max_lr: tr.max_lr,
            weight_decay: tr.weight_decay,
            baseline_longclip: false,
            fixed_k: tr.fixed_k,
            ks: vec![1, 5, 10],
            seed: 0,
        }
    }
}

fn parse_list(v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|e| Error::Validation(format!("bad list entry {x:?}: {e}")))
        })
        .collect()
}

impl RunConfig {
    /// Overlay `key = value` lines from a config file. `#` starts a
    /// comment; blank lines are skipped; unknown keys are rejected.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {raw:?}"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! num {
            () => {
                value
                    .parse()
                    .map_err(|e| Error::Validation(format!("key {key}: {e}")))?
            };
        }
        match key {
            "n_samples" => self.n_samples = num!(),
            "n_frames" => self.n_frames = num!(),
            "d_in" => self.d_in = num!(),
            "noise_std" => self.noise_std = num!(),
            "vocab" => self.vocab = num!(),
            "d_embed" => self.d_embed = num!(),
            "d" => self.d = num!(),
            "m" => self.m = num!(),
            "q" => self.q = num!(),
            "p" => self.p = num!(),
            "q_values" => self.q_values = parse_list(value)?,
            "tau" => self.tau = num!(),
            "alpha1" => self.alpha1 = num!(),
            "alpha2" => self.alpha2 = num!(),
            "alpha3" => self.alpha3 = num!(),
            "alpha_d" => self.alpha_d = num!(),
            "alpha_h" => self.alpha_h = num!(),
            "batch_size" => self.batch_size = num!(),
            "epochs" => self.epochs = num!(),
            "warmup_steps" => self.warmup_steps = num!(),
            "max_lr" => self.max_lr = num!(),
            "weight_decay" => self.weight_decay = num!(),
            "baseline_longclip" => {
                self.baseline_longclip = value
                    .parse()
                    .map_err(|e| Error::Validation(format!("key {key}: {e}")))?
            }
            "fixed_k" => self.fixed_k = num!(),
            "ks" => self.ks = parse_list(value)?,
            "seed" => self.seed = num!(),
            other => {
                return Err(Error::Validation(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Render the fully-resolved configuration as `key = value` lines.
    pub fn echo(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "n_samples = {}\nn_frames = {}\nd_in = {}\nnoise_std = {}\n\
             vocab = {}\nd_embed = {}\nd = {}\n\
             m = {}\nq = {}\np = {}\nq_values = {}\n\
             tau = {}\nalpha1 = {}\nalpha2 = {}\nalpha3 = {}\nalpha_d = {}\nalpha_h = {}\n\
             batch_size = {}\nepochs = {}\nwarmup_steps = {}\nmax_lr = {}\nweight_decay = {}\n\
             baseline_longclip = {}\nfixed_k = {}\nks = {}\nseed = {}\n",
            self.n_samples,
            self.n_frames,
            self.d_in,
            self.noise_std,
            self.vocab,
            self.d_embed,
            self.d,
            self.m,
            self.q,
            self.p,
            list(&self.q_values),
            self.tau,
            self.alpha1,
            self.alpha2,
            self.alpha3,
            self.alpha_d,
            self.alpha_h,
            self.batch_size,
            self.epochs,
            self.warmup_steps,
            self.max_lr,
            self.weight_decay,
            self.baseline_longclip,
            self.fixed_k,
            list(&self.ks),
            self.seed,
        )
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            n_samples: self.n_samples,
            n_frames: self.n_frames,
            d_in: self.d_in,
            noise_std: self.noise_std,
        }
    }

    pub fn enc_config(&self, d_in: usize) -> EncoderConfig {
        EncoderConfig {
            vocab: self.vocab,
            d_embed: self.d_embed,
            d: self.d,
            d_in,
            n_frames: self.n_frames,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            alpha_d: self.alpha_d,
            alpha_h: self.alpha_h,
            m: self.m,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_steps: self.warmup_steps,
            max_lr: self.max_lr,
            weight_decay: self.weight_decay,
            seed: self.seed,
            loss: self.loss_config(),
            baseline_longclip: self.baseline_longclip,
            fixed_k: self.fixed_k,
        }
    }

    pub fn perturb_config(&self) -> PerturbConfig {
        PerturbConfig {
            m: self.m,
            q: self.q,
            seed: self.seed,
        }
    }
}

// ── Argument definitions ───────────────────────────────────────────────

#[derive(Parser)]
#[command(
    name = "vtlab",
    version,
    about = "Desk-scale video-text contrastive training lab"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)] // parsed once; Train carries many overrides
enum Cmd {
    /// Generate a synthetic corpus of frame features and paired descriptions
    GenCorpus(GenCorpusArgs),
    /// Build hallucination and detail-degradation chains for a corpus
    BuildChains(BuildChainsArgs),
    /// Build description-ranking benchmark subsets (one per q value)
    BuildLvdr(BuildLvdrArgs),
    /// Train the encoders
    Train(TrainArgs),
    /// Text-video retrieval recall over a corpus
    EvalRetrieval(EvalArgs),
    /// Description-ranking metrics over benchmark subsets
    EvalLvdr(EvalLvdrArgs),
    /// Dump per-sample component-retention decisions for audit
    InspectPce(InspectPceArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory (created if missing); receives the resolved config echo
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value config file applied before command-line overrides
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of records [default: 2000]
    #[arg(long)]
    n: Option<usize>,
    /// Frames per record [default: 8]
    #[arg(long)]
    frames: Option<usize>,
    /// Frame feature dimension [default: 64]
    #[arg(long)]
    d_in: Option<usize>,
    /// Gaussian noise std on frame features [default: 0.05]
    #[arg(long)]
    noise_std: Option<f64>,
    /// Write frames to binary sidecar files instead of inline JSON
    #[arg(long)]
    sidecar: bool,
}

#[derive(Args)]
struct BuildChainsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSONL path
    #[arg(long)]
    corpus: PathBuf,
    /// Chain length including the original [default: 5]
    #[arg(long)]
    m: Option<usize>,
    /// Words altered per hallucination step [default: 1]
    #[arg(long)]
    q: Option<usize>,
}

#[derive(Args)]
struct BuildLvdrArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSONL path
    #[arg(long)]
    corpus: PathBuf,
    /// Descriptions per chain [default: 4]
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated q values, one subset each [default: 1,2,3,4,5]
    #[arg(long)]
    q_values: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSONL path
    #[arg(long)]
    corpus: PathBuf,
    /// Hallucination chains JSONL path
    #[arg(long)]
    chains_h: PathBuf,
    /// Detail-degradation chains JSONL path
    #[arg(long)]
    chains_d: PathBuf,
    /// Resume from a checkpoint file
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Save checkpoint_step{N}.vcxc every N steps
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Fixed-k component reduction instead of similarity-guided retention
    #[arg(long)]
    baseline_longclip: bool,
    /// Batch size [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs [default: 2]
    #[arg(long)]
    epochs: Option<usize>,
    /// Linear warmup steps [default: 200]
    #[arg(long)]
    warmup_steps: Option<u64>,
    /// Peak learning rate [default: 0.001]
    #[arg(long)]
    max_lr: Option<f64>,
    /// Decoupled weight decay [default: 0.02]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// InfoNCE temperature [default: 0.07]
    #[arg(long)]
    tau: Option<f64>,
    /// Weight of the short-text contrastive term [default: 0.1]
    #[arg(long)]
    alpha1: Option<f64>,
    /// Weight of the detail-ranking term [default: 1.0]
    #[arg(long)]
    alpha2: Option<f64>,
    /// Weight of the hallucination-ranking term [default: 10.0]
    #[arg(long)]
    alpha3: Option<f64>,
    /// Detail-ranking similarity gap [default: 0.0]
    #[arg(long)]
    alpha_d: Option<f64>,
    /// Hallucination-ranking similarity gap [default: 0.0]
    #[arg(long)]
    alpha_h: Option<f64>,
    /// Chain length m [default: 5]
    #[arg(long)]
    m: Option<usize>,
    /// k for the baseline reduction [default: 32]
    #[arg(long)]
    fixed_k: Option<usize>,
    /// Vocabulary buckets [default: 4096]
    #[arg(long)]
    vocab: Option<usize>,
    /// Token embedding dimension [default: 32]
    #[arg(long)]
    d_embed: Option<usize>,
    /// Feature dimension [default: 64]
    #[arg(long)]
    d: Option<usize>,
    /// Frames used per video [default: 8]
    #[arg(long)]
    n_frames: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSONL path (the retrieval pool)
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint file
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated recall cutoffs [default: 1,5,10]
    #[arg(long)]
    ks: Option<String>,
}

#[derive(Args)]
struct EvalLvdrArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSONL path providing the videos
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint file
    #[arg(long)]
    checkpoint: PathBuf,
    /// One or more subset chain JSONL files
    #[arg(long, num_args = 1.., required = true)]
    subsets: Vec<PathBuf>,
}

#[derive(Args)]
struct InspectPceArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus JSONL path
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint file
    #[arg(long)]
    checkpoint: PathBuf,
    /// Records per basis-fitting batch [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Audit the fixed-k baseline reduction instead
    #[arg(long)]
    baseline_longclip: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Random instances to check [default: 20]
    #[arg(long)]
    instances: Option<usize>,
    /// Central-difference step [default: 1e-4]
    #[arg(long)]
    eps: Option<f64>,
    /// Optional output directory for gradcheck.json
    #[arg(long)]
    out: Option<PathBuf>,
}

// ── Entry point ────────────────────────────────────────────────────────

/// Parse arguments and execute; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::GenCorpus(a) => cmd_gen_corpus(a),
        Cmd::BuildChains(a) => cmd_build_chains(a),
        Cmd::BuildLvdr(a) => cmd_build_lvdr(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::EvalRetrieval(a) => cmd_eval_retrieval(a),
        Cmd::EvalLvdr(a) => cmd_eval_lvdr(a),
        Cmd::InspectPce(a) => cmd_inspect_pce(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn prepare_out(common: &CommonArgs, cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("config.txt"), cfg.echo())?;
    Ok(common.out.clone())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_of(&hasher.finalize()))
}

fn hex_of(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Single provenance hash over every (name, file hash) pair.
fn combined_hash(input_hashes: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (name, hash) in input_hashes {
        hasher.update(name.as_bytes());
        hasher.update(b"=");
        hasher.update(hash.as_bytes());
        hasher.update(b"\n");
    }
    hex_of(&hasher.finalize())
}

// ── Subcommands ────────────────────────────────────────────────────────

fn cmd_gen_corpus(a: GenCorpusArgs) -> Result<i32> {
    let mut cfg = resolve_config(&a.common)?;
    if let Some(n) = a.n {
        cfg.n_samples = n;
    }
    if let Some(f) = a.frames {
        cfg.n_frames = f;
    }
    if let Some(d) = a.d_in {
        cfg.d_in = d;
    }
    if let Some(s) = a.noise_std {
        cfg.noise_std = s;
    }
    let out = prepare_out(&a.common, &cfg)?;
    let corpus = gen_synthetic_corpus(&cfg.gen_config(), cfg.seed)?;
    let path = out.join("corpus.jsonl");
    if a.sidecar {
        save_corpus_with_sidecar(&corpus, &path, "frames")?;
    } else {
        save_corpus(&corpus, &path)?;
    }
    println!(
        "wrote {} records (d_in {}) to {}",
        corpus.len(),
        corpus.d_in,
        path.display()
    );
    Ok(0)
}

fn cmd_build_chains(a: BuildChainsArgs) -> Result<i32> {
    let mut cfg = resolve_config(&a.common)?;
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(q) = a.q {
        cfg.q = q;
    }
    let out = prepare_out(&a.common, &cfg)?;
    let corpus = load_corpus(&a.corpus)?;
    let (h, d) = chains_for_corpus(&corpus, &Lexicons::builtin(), &cfg.perturb_config())?;
    let ph = out.join("chains_h.jsonl");
    let pd = out.join("chains_d.jsonl");
    save_chains(&h, &ph)?;
    save_chains(&d, &pd)?;
    println!(
        "wrote {} hallucination and {} degradation chains (m {}, q {})",
        h.len(),
        d.len(),
        cfg.m,
        cfg.q
    );
    Ok(0)
}

fn cmd_build_lvdr(a: BuildLvdrArgs) -> Result<i32> {
    let mut cfg = resolve_config(&a.common)?;
    if let Some(p) = a.p {
        cfg.p = p;
    }
    if let Some(qv) = &a.q_values {
        cfg.q_values = parse_list(qv)?;
    }
    let out = prepare_out(&a.common, &cfg)?;
    let corpus = load_corpus(&a.corpus)?;
    let subsets = build_lvdr(&corpus, cfg.p, &cfg.q_values, cfg.seed)?;
    for s in &subsets {
        let path = out.join(format!("lvdr_{}.jsonl", s.name));
        save_chains(&s.chains, &path)?;
        println!(
            "subset {}: {} chains, {} records skipped -> {}",
            s.name,
            s.chains.len(),
            s.skipped,
            path.display()
        );
    }
    Ok(0)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut cfg = resolve_config(&a.common)?;
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if let Some(v) = a.$field { cfg.$field = v; })*
        };
    }
    overlay!(
        batch_size,
        epochs,
        warmup_steps,
        max_lr,
        weight_decay,
        tau,
        alpha1,
        alpha2,
        alpha3,
        alpha_d,
        alpha_h,
        m,
        fixed_k,
        vocab,
        d_embed,
        d,
        n_frames
    );
    if a.baseline_longclip {
        cfg.baseline_longclip = true;
    }
    let out = prepare_out(&a.common, &cfg)?;

    let corpus = load_corpus(&a.corpus)?;
    let h_chains = load_chains(&a.chains_h)?;
    let d_chains = load_chains(&a.chains_d)?;
    let enc_cfg = cfg.enc_config(corpus.d_in);
    let train_cfg = cfg.train_config();
    let data = TrainData::new(&corpus, &h_chains, &d_chains, cfg.m)?;

    let resume_state = match &a.resume {
        Some(path) => {
            let (state, ckpt_enc, _) = load_checkpoint(path)?;
            if ckpt_enc != enc_cfg {
                return Err(Error::Checkpoint(format!(
                    "{}: encoder config does not match the run config",
                    path.display()
                )));
            }
            Some(state)
        }
        None => None,
    };

    let metrics_path = out.join("metrics.jsonl");
    let mut metrics_file = std::io::BufWriter::new(fs::File::create(&metrics_path)?);
    let final_state = train(&data, &enc_cfg, &train_cfg, resume_state, |m, state| {
        serde_json::to_writer(&mut metrics_file, m)?;
        metrics_file.write_all(b"\n")?;
        if let Some(every) = a.checkpoint_every {
            if every > 0 && state.step % every == 0 {
                let p = out.join(format!("checkpoint_step{}.vcxc", state.step));
                save_checkpoint(state, &enc_cfg, &train_cfg, &p)?;
            }
        }
        Ok(())
    })?;
    metrics_file.flush()?;
    drop(metrics_file);

    let ckpt_path = out.join("checkpoint.vcxc");
    save_checkpoint(&final_state, &enc_cfg, &train_cfg, &ckpt_path)?;
    println!(
        "trained {} steps; metrics -> {}; checkpoint -> {}",
        final_state.step,
        metrics_path.display(),
        ckpt_path.display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct RetrievalSummary {
    recall: Vec<RecallAtK>,
    pool: usize,
}

#[derive(Serialize)]
struct ReportFile {
    subsets: BTreeMap<String, SubsetScores>,
    retrieval: BTreeMap<String, RetrievalSummary>,
    checkpoint: String,
    data_hash: String,
    input_hashes: BTreeMap<String, String>,
}

/// Hash every input file, keyed by basename so reports do not depend on
/// where the run directory lives; rare basename collisions get a
/// deterministic numeric suffix.
fn input_hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for p in paths {
        let base = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        let mut key = base.clone();
        let mut suffix = 2;
        while map.contains_key(&key) {
            key = format!("{base}#{suffix}");
            suffix += 1;
        }
        map.insert(key, sha256_file(p)?);
    }
    Ok(map)
}

fn basename(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn cmd_eval_retrieval(a: EvalArgs) -> Result<i32> {
    let mut cfg = resolve_config(&a.common)?;
    if let Some(ks) = &a.ks {
        cfg.ks = parse_list(ks)?;
    }
    let out = prepare_out(&a.common, &cfg)?;
    let corpus = load_corpus(&a.corpus)?;
    let (state, enc_cfg, _) = load_checkpoint(&a.checkpoint)?;
    let (t2v, v2t) = eval_retrieval(&state.params, &enc_cfg, &corpus, &cfg.ks)?;

    let hashes = input_hashes(&[a.corpus.as_path(), a.checkpoint.as_path()])?;
    let mut retrieval = BTreeMap::new();
    for (key, rep) in [("t2v", &t2v), ("v2t", &v2t)] {
        retrieval.insert(
            key.to_string(),
            RetrievalSummary {
                recall: rep.recall.clone(),
                pool: rep.pool,
            },
        );
    }
    let report = ReportFile {
        subsets: BTreeMap::new(),
        retrieval,
        checkpoint: basename(&a.checkpoint),
        data_hash: combined_hash(&hashes),
        input_hashes: hashes,
    };
    let path = out.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    for rep in [&t2v, &v2t] {
        let line: Vec<String> = rep
            .recall
            .iter()
            .map(|r| format!("R@{} {:.2}", r.k, r.pct))
            .collect();
        println!("{:?} pool {}: {}", rep.direction, rep.pool, line.join("  "));
    }
    Ok(0)
}

fn cmd_eval_lvdr(a: EvalLvdrArgs) -> Result<i32> {
    let cfg = resolve_config(&a.common)?;
    let out = prepare_out(&a.common, &cfg)?;
    let corpus = load_corpus(&a.corpus)?;
    let (state, enc_cfg, _) = load_checkpoint(&a.checkpoint)?;

    let mut subsets = Vec::new();
    for path in &a.subsets {
        let chains = load_chains(path)?;
        let first = chains.first().ok_or_else(|| {
            Error::Validation(format!("subset file {} is empty", path.display()))
        })?;
        subsets.push(LvdrSubset {
            name: format!("{}x{}", first.m, first.q),
            p: first.m,
            q: first.q,
            skipped: 0,
            chains,
        });
    }
    let report = eval_lvdr(
        &state.params,
        &enc_cfg,
        &corpus,
        &subsets,
        &basename(&a.checkpoint),
    )?;

    let mut paths: Vec<&Path> = vec![a.corpus.as_path(), a.checkpoint.as_path()];
    paths.extend(a.subsets.iter().map(|p| p.as_path()));
    let hashes = input_hashes(&paths)?;
    let file = ReportFile {
        subsets: report.subsets.clone(),
        retrieval: BTreeMap::new(),
        checkpoint: report.checkpoint.clone(),
        data_hash: combined_hash(&hashes),
        input_hashes: hashes,
    };
    let path = out.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&file)?)?;
    for (name, s) in &report.subsets {
        println!("{name}: RS {:.2}  KT {:.2}  SC {:.2}", s.rs, s.kt, s.sc);
    }
    Ok(0)
}

#[derive(Serialize)]
struct PceAuditRow {
    id: String,
    target_sim: f64,
    k: usize,
    cos_at_k: f64,
}

fn cmd_inspect_pce(a: InspectPceArgs) -> Result<i32> {
    let mut cfg = resolve_config(&a.common)?;
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if a.baseline_longclip {
        cfg.baseline_longclip = true;
    }
    let out = prepare_out(&a.common, &cfg)?;
    let corpus = load_corpus(&a.corpus)?;
    let (state, enc_cfg, _) = load_checkpoint(&a.checkpoint)?;

    let mut rows = Vec::with_capacity(corpus.len());
    for batch in corpus.records.chunks(cfg.batch_size.max(1)) {
        let mut f_v = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for rec in batch {
            let (flt, _) = encode_text(&state.params, &enc_cfg, &rec.long)?;
            let (fst, _) = encode_text(&state.params, &enc_cfg, &rec.short)?;
            let (fv, _) = encode_video(&state.params, &enc_cfg, &rec.frames)?;
            targets.push(numerics::cosine_sim(&flt, &fst)?);
            f_v.push(fv);
        }
        let basis = fit_batch_basis(&f_v)?;
        for ((rec, fv), target) in batch.iter().zip(&f_v).zip(&targets) {
            let k = if cfg.baseline_longclip {
                cfg.fixed_k.min(basis.len()).max(1)
            } else {
                pce::tpcm(&basis, fv, *target)?.1
            };
            rows.push(PceAuditRow {
                id: rec.id.clone(),
                target_sim: *target,
                k,
                cos_at_k: pce::cos_at_k(&basis, fv, k)?,
            });
        }
    }
    let path = out.join("pce_dump.json");
    fs::write(&path, serde_json::to_string_pretty(&rows)?)?;
    let mean_k = rows.iter().map(|r| r.k as f64).sum::<f64>() / rows.len() as f64;
    println!("audited {} records; mean k {:.2} -> {}", rows.len(), mean_k, path.display());
    Ok(0)
}

#[derive(Serialize)]
struct GradcheckReport {
    seed: u64,
    instances: usize,
    eps: f64,
    max_rel_error: f64,
    per_instance: Vec<f64>,
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    let seed = a.seed.unwrap_or(0);
    let instances = a.instances.unwrap_or(20);
    let eps = a.eps.unwrap_or(1e-4);
    let mut per_instance = Vec::with_capacity(instances);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let inst = random_instance(seed.wrapping_add(i as u64), 4, 8, 3)?;
        let err = grad_check(&inst, eps)?;
        per_instance.push(err);
        worst = worst.max(err);
    }
    println!("max relative error over {instances} instances: {worst:.3e}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        let report = GradcheckReport {
            seed,
            instances,
            eps,
            max_rel_error: worst,
            per_instance,
        };
        fs::write(out.join("gradcheck.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(if worst < 1e-4 { 0 } else { 3 })
}
