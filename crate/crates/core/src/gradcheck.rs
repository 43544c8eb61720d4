//! Finite-difference verification of the analytic gradient path through
//! both encoders, the component reduction, and every loss term.
//!
//! The check probes every parameter entry with central differences and
//! compares against the composed analytic backward. The component basis is
//! held fixed at the unperturbed value: the backward contract treats the
//! basis as a constant, so the check probes exactly the function the
//! backward differentiates. Instances that sit within 1e-3 of a hinge kink
//! or a retention-count flip are re-drawn deterministically.

use crate::datamodel::{gen_synthetic_corpus, Corpus, GenConfig, Lexicons};
use crate::encoders::{EncoderConfig, EncoderParams, TENSOR_NAMES};
use crate::losses::LossConfig;
use crate::numerics::ComponentBasis;
use crate::perturb::{chains_for_corpus, DescriptionChain, PerturbConfig};
use crate::pipeline::{backward, forward, BatchRecord, PipelineConfig};
use crate::{Error, Result};

/// Max relative error between an analytic gradient and central finite
/// differences of `loss` at `x`, with denominator `max(|a|, |b|, 1e-8)`.
pub fn max_rel_error_fd(
    mut loss: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
) -> f64 {
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = loss(&probe);
        probe[i] = orig - eps;
        let minus = loss(&probe);
        probe[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let an = analytic[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// A self-contained random instance of the full objective: a tiny corpus
/// batch, perturbation chains, encoder parameters, and a pinned basis.
pub struct GradCheckInstance {
    pub enc_cfg: EncoderConfig,
    pub params: EncoderParams,
    pub pipeline_cfg: PipelineConfig,
    pub basis: ComponentBasis,
    corpus: Corpus,
    h_chains: Vec<DescriptionChain>,
    d_chains: Vec<DescriptionChain>,
}

impl GradCheckInstance {
    fn records(&self) -> Vec<BatchRecord<'_>> {
        self.corpus
            .records
            .iter()
            .zip(&self.h_chains)
            .zip(&self.d_chains)
            .map(|((rec, hc), dc)| BatchRecord {
                id: &rec.id,
                frames: &rec.frames,
                long: &rec.long,
                short: &rec.short,
                h_perturbed: &hc.descs[1..],
                d_perturbed: &dc.descs[1..],
            })
            .collect()
    }

    /// Total loss at the given parameters with the pinned basis.
    pub fn loss_at(&self, params: &EncoderParams) -> Result<f64> {
        let art = forward(params, &self.enc_cfg, &self.records(), &self.pipeline_cfg, Some(&self.basis))?;
        Ok(art.terms.total)
    }

    /// Analytic parameter gradients at the instance's parameters.
    pub fn analytic_grads(&self) -> Result<EncoderParams> {
        let art = forward(
            &self.params,
            &self.enc_cfg,
            &self.records(),
            &self.pipeline_cfg,
            Some(&self.basis),
        )?;
        backward(&self.params, &self.enc_cfg, &art)
    }
}

/// Margin (in similarity units) an instance must keep from every hinge
/// kink and retention-flip boundary.
const KINK_MARGIN: f64 = 1e-3;

/// Build a random instance, re-drawing deterministically until it clears
/// every kink by `KINK_MARGIN`.
pub fn random_instance(seed: u64, n: usize, d: usize, m: usize) -> Result<GradCheckInstance> {
    for attempt in 0..100 {
        let inst = build_instance(seed.wrapping_add(attempt * 1_000_003), n, d, m)?;
        if clears_kinks(&inst)? {
            return Ok(inst);
        }
    }
    Err(Error::InvalidArgument(
        "could not draw a kink-free gradient-check instance in 100 attempts".into(),
    ))
}

fn build_instance(seed: u64, n: usize, d: usize, m: usize) -> Result<GradCheckInstance> {
    let corpus = gen_synthetic_corpus(
        &GenConfig {
            n_samples: n,
            n_frames: 3,
            d_in: 48,
            noise_std: 0.2,
        },
        seed,
    )?;
    let (h_chains, d_chains) = chains_for_corpus(
        &corpus,
        &Lexicons::builtin(),
        &PerturbConfig { m, q: 1, seed },
    )?;
    let enc_cfg = EncoderConfig {
        vocab: 32,
        d_embed: 6,
        d,
        d_in: 48,
        n_frames: 3,
    };
    // Wider than the training init (still magnitude <= 1): spreads the
    // chain similarities so the kink margin is satisfiable.
    let params = wide_params(&enc_cfg, seed ^ 0x5eed);
    let pipeline_cfg = PipelineConfig {
        loss: LossConfig { m, ..LossConfig::default() },
        ..PipelineConfig::default()
    };
    // Pin the basis fit on this instance's own video features.
    let art = forward(&params, &enc_cfg, &records_of(&corpus, &h_chains, &d_chains), &pipeline_cfg, None)?;
    Ok(GradCheckInstance {
        enc_cfg,
        params,
        pipeline_cfg,
        basis: art.basis,
        corpus,
        h_chains,
        d_chains,
    })
}

fn wide_params(cfg: &EncoderConfig, seed: u64) -> EncoderParams {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut params = EncoderParams::zeros(cfg);
    for (_, tensor, _) in params.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = (rng.random_range(-0.5f64..0.5) as f32) as f64;
        }
    }
    params
}

fn records_of<'a>(
    corpus: &'a Corpus,
    h: &'a [DescriptionChain],
    d: &'a [DescriptionChain],
) -> Vec<BatchRecord<'a>> {
    corpus
        .records
        .iter()
        .zip(h)
        .zip(d)
        .map(|((rec, hc), dc)| BatchRecord {
            id: &rec.id,
            frames: &rec.frames,
            long: &rec.long,
            short: &rec.short,
            h_perturbed: &hc.descs[1..],
            d_perturbed: &dc.descs[1..],
        })
        .collect()
}

/// True when every hinge argument and every retention decision sits at
/// least `KINK_MARGIN` away from its switching point.
fn clears_kinks(inst: &GradCheckInstance) -> Result<bool> {
    let art = forward(
        &inst.params,
        &inst.enc_cfg,
        &inst.records(),
        &inst.pipeline_cfg,
        Some(&inst.basis),
    )?;
    let cfg = &inst.pipeline_cfg.loss;
    for (rows, alpha) in [
        (&art.chain_sims_d, cfg.alpha_d),
        (&art.chain_sims_h, cfg.alpha_h),
    ] {
        for row in rows.iter() {
            let mlen = row.len();
            for i in 0..mlen - 1 {
                for j in i + 1..mlen {
                    if (alpha - (row[i] - row[j])).abs() < KINK_MARGIN {
                        return Ok(false);
                    }
                }
            }
        }
    }
    // Retention flips: the chosen k must clear the target comfortably and
    // every smaller k must miss it comfortably.
    for i in 0..art.f_v.len() {
        let target = art.target_sims[i];
        let k = art.retained_ks[i];
        for kk in 1..=k {
            let cos = crate::pce::cos_at_k(&inst.basis, &art.f_v[i], kk)?;
            if kk < k {
                if target - cos < KINK_MARGIN {
                    return Ok(false);
                }
            } else if k < inst.basis.len() && cos - target < KINK_MARGIN {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Central-difference check of every parameter entry of the full objective.
/// Returns the max relative error across all tensors.
pub fn grad_check(inst: &GradCheckInstance, eps: f64) -> Result<f64> {
    let analytic = inst.analytic_grads()?;
    let mut worst = 0.0f64;
    let mut probe = inst.params.clone();
    for ti in 0..TENSOR_NAMES.len() {
        let len = probe.tensors()[ti].1.len();
        for idx in 0..len {
            let orig = probe.tensors()[ti].1[idx];
            probe.tensors_mut()[ti].1[idx] = orig + eps;
            let plus = inst.loss_at(&probe)?;
            probe.tensors_mut()[ti].1[idx] = orig - eps;
            let minus = inst.loss_at(&probe)?;
            probe.tensors_mut()[ti].1[idx] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let an = analytic.tensors()[ti].1[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
