//! Deterministic training loop: seeded epoch shuffles, warmup-plus-cosine
//! learning rate, Adam with decoupled weight decay, and bit-exact
//! checkpoint/resume.
//!
//! Reproducibility contract: (corpus bytes, chain bytes, config, seed)
//! fully determine the metrics stream and the final checkpoint bytes.
//! Parameters and optimizer moments are snapped to f32-representable
//! values after every update, so the f32 checkpoint encoding is lossless
//! and a resumed run replays the uninterrupted stream exactly.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::Corpus;
use crate::encoders::{init_params, EncoderConfig, EncoderParams};
use crate::losses::LossConfig;
use crate::perturb::{ChainKind, DescriptionChain};
use crate::pipeline::{backward, forward, BatchRecord, PipelineConfig};
use crate::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: u64,
    pub max_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub baseline_longclip: bool,
    pub fixed_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 2,
            warmup_steps: 200,
            max_lr: 1e-3,
            weight_decay: 0.02,
            seed: 0,
            loss: LossConfig::default(),
            baseline_longclip: false,
            fixed_k: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "max_lr must be > 0, got {}",
                self.max_lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        if self.fixed_k < 1 {
            return Err(Error::InvalidArgument("fixed_k must be >= 1".into()));
        }
        self.loss.validate()
    }

    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            loss: self.loss.clone(),
            baseline_longclip: self.baseline_longclip,
            fixed_k: self.fixed_k,
        }
    }
}

/// Learning rate at a global step: linear ramp to `max_lr` over
/// `warmup_steps`, then cosine decay to zero at the last step.
pub fn lr_at(step: u64, cfg: &TrainConfig, total_steps: u64) -> f64 {
    let last = total_steps.saturating_sub(1);
    if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
        return cfg.max_lr * step as f64 / cfg.warmup_steps as f64;
    }
    if last <= cfg.warmup_steps {
        return cfg.max_lr;
    }
    let progress = ((step - cfg.warmup_steps) as f64 / (last - cfg.warmup_steps) as f64).min(1.0);
    cfg.max_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Seed for one epoch's shuffle, derived functionally so resume needs no
/// carried generator state.
pub fn epoch_seed(base: u64, epoch: u64) -> u64 {
    base ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Seeded epoch shuffle into full batches; the trailing partial batch is
/// dropped.
pub fn make_batches(n_records: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_records < batch_size {
        return Err(Error::InvalidArgument(format!(
            "corpus of {n_records} records is smaller than one batch of {batch_size}"
        )));
    }
    let mut indices: Vec<usize> = (0..n_records).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    indices.shuffle(&mut rng);
    Ok(indices
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect())
}

/// Optimizer and parameter state. Serializable; resume-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: EncoderParams,
    pub adam_m: EncoderParams,
    pub adam_v: EncoderParams,
    pub step: u64,
}

impl TrainState {
    pub fn init(enc_cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            params: init_params(enc_cfg, seed)?,
            adam_m: EncoderParams::zeros(enc_cfg),
            adam_v: EncoderParams::zeros(enc_cfg),
            step: 0,
        })
    }
}

/// One metrics line per training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub total: f64,
    pub cl_long: f64,
    pub cl_short: f64,
    pub ddr: f64,
    pub hdr: f64,
    pub mean_tpcm_k: f64,
    pub lr: f64,
}

/// Corpus plus per-record perturbation chains, indexed for batching.
pub struct TrainData<'a> {
    corpus: &'a Corpus,
    h_by_id: HashMap<&'a str, &'a DescriptionChain>,
    d_by_id: HashMap<&'a str, &'a DescriptionChain>,
}

impl<'a> TrainData<'a> {
    pub fn new(
        corpus: &'a Corpus,
        h_chains: &'a [DescriptionChain],
        d_chains: &'a [DescriptionChain],
        m: usize,
    ) -> Result<Self> {
        let mut h_by_id = HashMap::new();
        for c in h_chains {
            if c.kind != ChainKind::H {
                return Err(Error::Validation(format!(
                    "chain for {} in the H stream has kind D",
                    c.video_id
                )));
            }
            h_by_id.insert(c.video_id.as_str(), c);
        }
        let mut d_by_id = HashMap::new();
        for c in d_chains {
            if c.kind != ChainKind::D {
                return Err(Error::Validation(format!(
                    "chain for {} in the D stream has kind H",
                    c.video_id
                )));
            }
            d_by_id.insert(c.video_id.as_str(), c);
        }
        for rec in &corpus.records {
            for (map, label) in [(&h_by_id, "H"), (&d_by_id, "D")] {
                let chain = map.get(rec.id.as_str()).ok_or_else(|| {
                    Error::Validation(format!("record {} has no {label} chain", rec.id))
                })?;
                if chain.descs.len() != m {
                    return Err(Error::Validation(format!(
                        "record {}: {label} chain has {} descriptions, config m = {m}",
                        rec.id,
                        chain.descs.len()
                    )));
                }
                if chain.descs[0] != rec.long {
                    return Err(Error::Validation(format!(
                        "record {}: {label} chain element 0 differs from the long description",
                        rec.id
                    )));
                }
            }
        }
        Ok(Self { corpus, h_by_id, d_by_id })
    }

    pub fn len(&self) -> usize {
        self.corpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpus.is_empty()
    }

    fn batch(&self, indices: &[usize]) -> Vec<BatchRecord<'_>> {
        indices
            .iter()
            .map(|&i| {
                let rec = &self.corpus.records[i];
                let h = self.h_by_id[rec.id.as_str()];
                let d = self.d_by_id[rec.id.as_str()];
                BatchRecord {
                    id: &rec.id,
                    frames: &rec.frames,
                    long: &rec.long,
                    short: &rec.short,
                    h_perturbed: &h.descs[1..],
                    d_perturbed: &d.descs[1..],
                }
            })
            .collect()
    }
}

/// Snap a value to the nearest f32-representable number. Applied to all
/// state tensors after every update so checkpoints are lossless.
fn snap_f32(x: f64) -> f64 {
    (x as f32) as f64
}

/// One optimization step: forward, backward, Adam update with decoupled
/// weight decay (bias vectors excluded), f32 snap.
pub fn train_step(
    state: &mut TrainState,
    records: &[BatchRecord<'_>],
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    total_steps: u64,
) -> Result<StepMetrics> {
    let lr = lr_at(state.step, cfg, total_steps);
    let art = forward(&state.params, enc_cfg, records, &cfg.pipeline(), None)?;
    if !art.terms.total.is_finite() {
        return Err(Error::NonFinite {
            step: state.step,
            batch_id: records[0].id.to_string(),
        });
    }
    let grads = backward(&state.params, enc_cfg, &art)?;

    let t = (state.step + 1) as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let mut params_t = state.params.tensors_mut();
    let mut m_t = state.adam_m.tensors_mut();
    let mut v_t = state.adam_v.tensors_mut();
    let g_t = grads.tensors();
    for i in 0..params_t.len() {
        let (_, p, decay) = &mut params_t[i];
        let (_, m, _) = &mut m_t[i];
        let (_, v, _) = &mut v_t[i];
        let g = g_t[i].1;
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            let mut update = lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            if *decay {
                update += lr * cfg.weight_decay * p[j];
            }
            p[j] = snap_f32(p[j] - update);
            m[j] = snap_f32(m[j]);
            v[j] = snap_f32(v[j]);
        }
    }

    let metrics = StepMetrics {
        step: state.step,
        total: art.terms.total,
        cl_long: art.terms.cl_long,
        cl_short: art.terms.cl_short,
        ddr: art.terms.ddr,
        hdr: art.terms.hdr,
        mean_tpcm_k: art.mean_retained_k(),
        lr,
    };
    state.step += 1;
    Ok(metrics)
}

/// Total full batches over the whole run.
pub fn total_steps(n_records: usize, cfg: &TrainConfig) -> u64 {
    (cfg.epochs * (n_records / cfg.batch_size)) as u64
}

/// Run the training loop. With `resume`, steps before `resume.step` are
/// fast-forwarded (batch composition is a pure function of seed and
/// epoch), so the continuation replays the uninterrupted run exactly.
/// The callback sees each step's metrics and the post-update state;
/// callers use it for metrics streaming and periodic checkpoints.
pub fn train(
    data: &TrainData<'_>,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    mut on_step: impl FnMut(&StepMetrics, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    let steps = total_steps(data.len(), cfg);
    if steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "corpus of {} records yields zero full batches of {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let mut state = match resume {
        Some(s) => {
            s.params.validate(enc_cfg)?;
            s
        }
        None => TrainState::init(enc_cfg, cfg.seed)?,
    };
    let mut global: u64 = 0;
    for epoch in 0..cfg.epochs as u64 {
        let batches = make_batches(data.len(), cfg.batch_size, epoch_seed(cfg.seed, epoch))?;
        for indices in &batches {
            if global < state.step {
                global += 1;
                continue;
            }
            let records = data.batch(indices);
            let metrics = train_step(&mut state, &records, enc_cfg, cfg, steps)?;
            on_step(&metrics, &state)?;
            global += 1;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{gen_synthetic_corpus, GenConfig, Lexicons};
    use crate::perturb::{chains_for_corpus, PerturbConfig};

    fn fixture(
        n: usize,
        m: usize,
        seed: u64,
    ) -> (Corpus, Vec<DescriptionChain>, Vec<DescriptionChain>, EncoderConfig) {
        let corpus = gen_synthetic_corpus(
            &GenConfig {
                n_samples: n,
                n_frames: 3,
                d_in: 48,
                noise_std: 0.05,
            },
            seed,
        )
        .unwrap();
        let (h, d) = chains_for_corpus(
            &corpus,
            &Lexicons::builtin(),
            &PerturbConfig { m, q: 1, seed },
        )
        .unwrap();
        let enc_cfg = EncoderConfig {
            vocab: 128,
            d_embed: 8,
            d: 16,
            d_in: 48,
            n_frames: 3,
        };
        (corpus, h, d, enc_cfg)
    }

    fn small_cfg(m: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 2,
            warmup_steps: 2,
            max_lr: 0.01,
            seed,
            loss: LossConfig { m, ..LossConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn lr_schedule_endpoints() {
        let cfg = TrainConfig {
            warmup_steps: 200,
            max_lr: 1e-3,
            ..TrainConfig::default()
        };
        let total = 1000u64;
        assert_eq!(lr_at(0, &cfg, total), 0.0);
        assert!((lr_at(200, &cfg, total) - 1e-3).abs() < 1e-18);
        let final_lr = lr_at(total - 1, &cfg, total);
        assert!(final_lr < 1e-9 * cfg.max_lr, "final lr {final_lr}");
        // Monotone ramp up, then monotone decay.
        assert!(lr_at(100, &cfg, total) < lr_at(150, &cfg, total));
        assert!(lr_at(500, &cfg, total) > lr_at(800, &cfg, total));
    }

    #[test]
    fn batches_are_seeded_and_drop_last() {
        let a = make_batches(130, 64, 9).unwrap();
        let b = make_batches(130, 64, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|batch| batch.len() == 64));
        let c = make_batches(130, 64, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batches_cover_shuffle_prefix() {
        // Replay the shuffle independently and compare the union.
        let n = 130;
        let seed = 77;
        let batches = make_batches(n, 64, seed).unwrap();
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        let expect: Vec<usize> = indices[..128].to_vec();
        let got: Vec<usize> = batches.into_iter().flatten().collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn batches_reject_short_corpus() {
        assert!(make_batches(3, 4, 0).is_err());
    }

    #[test]
    fn single_term_ablation_total_equals_cl_long() {
        let (corpus, h, d, enc_cfg) = fixture(8, 3, 71);
        let cfg = TrainConfig {
            loss: LossConfig {
                alpha1: 0.0,
                alpha2: 0.0,
                alpha3: 0.0,
                m: 3,
                ..LossConfig::default()
            },
            ..small_cfg(3, 71)
        };
        let data = TrainData::new(&corpus, &h, &d, 3).unwrap();
        let mut state = TrainState::init(&enc_cfg, cfg.seed).unwrap();
        let batch = data.batch(&[0, 1, 2, 3]);
        let metrics = train_step(&mut state, &batch, &enc_cfg, &cfg, 10).unwrap();
        assert!((metrics.total - metrics.cl_long).abs() < 1e-15);
    }

    #[test]
    fn identical_seeds_give_identical_metric_streams() {
        let (corpus, h, d, enc_cfg) = fixture(12, 3, 72);
        let cfg = small_cfg(3, 72);
        let data = TrainData::new(&corpus, &h, &d, 3).unwrap();
        let mut m1 = Vec::new();
        let s1 = train(&data, &enc_cfg, &cfg, None, |m, _| { m1.push(m.clone()); Ok(()) }).unwrap();
        let mut m2 = Vec::new();
        let s2 = train(&data, &enc_cfg, &cfg, None, |m, _| { m2.push(m.clone()); Ok(()) }).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
        assert_eq!(m1.len(), 6); // 12/4 = 3 batches x 2 epochs
    }

    #[test]
    fn loss_descends_on_noiseless_data() {
        let corpus = gen_synthetic_corpus(
            &GenConfig {
                n_samples: 24,
                n_frames: 2,
                d_in: 48,
                noise_std: 0.0,
            },
            73,
        )
        .unwrap();
        let (h, d) = chains_for_corpus(
            &corpus,
            &Lexicons::builtin(),
            &PerturbConfig { m: 3, q: 1, seed: 73 },
        )
        .unwrap();
        let enc_cfg = EncoderConfig {
            vocab: 256,
            d_embed: 8,
            d: 16,
            d_in: 48,
            n_frames: 2,
        };
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 17, // 3 batches per epoch -> 51 steps
            warmup_steps: 5,
            max_lr: 0.05,
            seed: 73,
            loss: LossConfig { m: 3, ..LossConfig::default() },
            ..TrainConfig::default()
        };
        let data = TrainData::new(&corpus, &h, &d, 3).unwrap();
        let mut stream = Vec::new();
        train(&data, &enc_cfg, &cfg, None, |m, _| { stream.push(m.clone()); Ok(()) }).unwrap();
        assert!(stream.len() >= 50);
        assert!(
            stream[50].total < stream[1].total,
            "step 50 loss {} not below step 1 loss {}",
            stream[50].total,
            stream[1].total
        );
    }

    #[test]
    fn baseline_mode_logs_constant_k() {
        let (corpus, h, d, enc_cfg) = fixture(8, 3, 74);
        let cfg = TrainConfig {
            baseline_longclip: true,
            ..small_cfg(3, 74)
        };
        let data = TrainData::new(&corpus, &h, &d, 3).unwrap();
        let mut ks = Vec::new();
        train(&data, &enc_cfg, &cfg, None, |m, _| { ks.push(m.mean_tpcm_k); Ok(()) }).unwrap();
        assert!(ks.windows(2).all(|w| w[0] == w[1]));
        // Batch rank is min(batch, d) = 4; fixed k pins to it.
        assert_eq!(ks[0], 4.0);
    }

    #[test]
    fn chain_mismatch_is_rejected() {
        let (corpus, h, d, _) = fixture(4, 3, 75);
        // Wrong m.
        assert!(TrainData::new(&corpus, &h, &d, 5).is_err());
        // Missing chain.
        assert!(TrainData::new(&corpus, &h[1..], &d, 3).is_err());
        // Swapped kinds.
        assert!(TrainData::new(&corpus, &d, &h, 3).is_err());
    }

    #[test]
    fn weight_decay_excludes_biases() {
        let (corpus, h, d, enc_cfg) = fixture(4, 3, 76);
        let data = TrainData::new(&corpus, &h, &d, 3).unwrap();
        let batch = data.batch(&[0, 1, 2, 3]);
        // Huge decay, one step at peak lr: decayed tensors shrink toward
        // zero much faster than the Adam step can move them.
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            warmup_steps: 0,
            max_lr: 1e-6,
            weight_decay: 1e5,
            seed: 76,
            loss: LossConfig { m: 3, ..LossConfig::default() },
            ..TrainConfig::default()
        };
        let mut state = TrainState::init(&enc_cfg, 76).unwrap();
        let before = state.params.clone();
        train_step(&mut state, &batch, &enc_cfg, &cfg, 1).unwrap();
        let decay_factor = 1.0 - cfg.max_lr * cfg.weight_decay; // 0.9
        let embed_ratio = state.params.text_embed[0] / before.text_embed[0];
        assert!((embed_ratio - decay_factor).abs() < 1e-3);
        // Biases move only by the (tiny) Adam step, never by decay.
        for (b_after, b_before) in state.params.text_bias.iter().zip(&before.text_bias) {
            assert!((b_after - b_before).abs() <= cfg.max_lr * 1.01);
        }
    }

    #[test]
    fn resume_replays_uninterrupted_stream() {
        let (corpus, h, d, enc_cfg) = fixture(16, 3, 78);
        let cfg = small_cfg(3, 78); // 4 batches x 2 epochs = 8 steps
        let data = TrainData::new(&corpus, &h, &d, 3).unwrap();

        let mut full = Vec::new();
        train(&data, &enc_cfg, &cfg, None, |m, _| { full.push(m.clone()); Ok(()) }).unwrap();

        // Midpoint state: replay the first epoch's 4 steps, checkpoint it
        // through the serialization round trip.
        let mut state = TrainState::init(&enc_cfg, cfg.seed).unwrap();
        let steps = total_steps(data.len(), &cfg);
        let batches = make_batches(data.len(), cfg.batch_size, epoch_seed(cfg.seed, 0)).unwrap();
        for indices in &batches {
            let records = data.batch(indices);
            train_step(&mut state, &records, &enc_cfg, &cfg, steps).unwrap();
        }
        assert_eq!(state.step, 4);
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("mid.vcxc");
        save_checkpoint(&state, &enc_cfg, &cfg, &ckpt).unwrap();
        let (loaded, loaded_enc, loaded_cfg) = load_checkpoint(&ckpt).unwrap();
        assert_eq!(loaded_enc, enc_cfg);
        assert_eq!(loaded_cfg, cfg);

        let mut resumed = Vec::new();
        train(&data, &enc_cfg, &cfg, Some(loaded), |m, _| { resumed.push(m.clone()); Ok(()) }).unwrap();
        assert_eq!(resumed.len(), 4);
        assert_eq!(&full[4..], &resumed[..]);
    }

    #[test]
    fn state_is_f32_snapped_after_updates() {
        let (corpus, h, d, enc_cfg) = fixture(4, 3, 77);
        let data = TrainData::new(&corpus, &h, &d, 3).unwrap();
        let cfg = small_cfg(3, 77);
        let batch = data.batch(&[0, 1, 2, 3]);
        let mut state = TrainState::init(&enc_cfg, 77).unwrap();
        train_step(&mut state, &batch, &enc_cfg, &cfg, 10).unwrap();
        for tensors in [&state.params, &state.adam_m, &state.adam_v] {
            for (_, t, _, _) in tensors.tensors() {
                for &x in t {
                    assert_eq!(x, (x as f32) as f64);
                }
            }
        }
    }
}
