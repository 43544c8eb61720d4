//! Batch forward/backward composition: encoders -> basis fit -> component
//! reduction -> chain similarities -> total loss -> parameter gradients.
//!
//! The component basis is a constant during backward (no gradient through
//! the decomposition); gradients flow through the linear projection onto
//! the retained components only. Training refits the basis on every
//! batch's video features; the gradient checker passes a fixed basis so
//! finite differences probe exactly the function the backward
//! differentiates.
//!
//! All accumulation runs in a fixed order (record order; within a record:
//! long text, short text, hallucination chain, detail chain, video), so
//! results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::datamodel::Description;

/// Features, caches, and chain-element similarities for one record's chain.
type ChainForward = (Vec<Vec<f64>>, Vec<TextCache>, Vec<f64>);
use crate::encoders::{
    accumulate_text_backward, accumulate_video_backward, encode_text, encode_video, EncoderConfig,
    EncoderGrads, EncoderParams, TextCache, VideoCache,
};
use crate::losses::{cosine_with_grad, total_loss, BatchFeatures, FeatureGrads, LossConfig, LossTerms};
use crate::numerics::{self, ComponentBasis, Matrix};
use crate::pce;
use crate::{Error, Result};

/// Objective wiring for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub loss: LossConfig,
    /// Use the fixed-k reduction instead of the similarity-guided one.
    pub baseline_longclip: bool,
    /// k for the baseline mode.
    pub fixed_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            baseline_longclip: false,
            fixed_k: 32,
        }
    }
}

/// Borrowed view of one record's training inputs. Chain descriptions hold
/// the perturbed steps only; element 0 of each chain is the long
/// description itself.
#[derive(Debug, Clone, Copy)]
pub struct BatchRecord<'a> {
    pub id: &'a str,
    pub frames: &'a [Vec<f32>],
    pub long: &'a Description,
    pub short: &'a Description,
    pub h_perturbed: &'a [Description],
    pub d_perturbed: &'a [Description],
}

/// Everything the forward pass computed, kept for the backward pass and
/// for metrics.
pub struct ForwardArtifacts {
    pub basis: ComponentBasis,
    pub f_lt: Vec<Vec<f64>>,
    pub f_st: Vec<Vec<f64>>,
    pub f_v: Vec<Vec<f64>>,
    pub f_v_reduced: Vec<Vec<f64>>,
    pub retained_ks: Vec<usize>,
    pub target_sims: Vec<f64>,
    lt_caches: Vec<TextCache>,
    st_caches: Vec<TextCache>,
    v_caches: Vec<VideoCache>,
    h_feats: Vec<Vec<Vec<f64>>>,
    h_caches: Vec<Vec<TextCache>>,
    d_feats: Vec<Vec<Vec<f64>>>,
    d_caches: Vec<Vec<TextCache>>,
    pub chain_sims_h: Vec<Vec<f64>>,
    pub chain_sims_d: Vec<Vec<f64>>,
    pub terms: LossTerms,
    pub feature_grads: FeatureGrads,
}

impl ForwardArtifacts {
    pub fn mean_retained_k(&self) -> f64 {
        self.retained_ks.iter().sum::<usize>() as f64 / self.retained_ks.len() as f64
    }
}

/// Fit the per-batch component basis on the uncentered video features.
pub fn fit_batch_basis(video_feats: &[Vec<f64>]) -> Result<ComponentBasis> {
    numerics::orthonormal_basis(&Matrix::from_rows(video_feats)?)
}

/// Forward a batch. `basis_override` pins the basis (gradient checking);
/// otherwise it is refit on this batch's video features.
pub fn forward(
    params: &EncoderParams,
    enc_cfg: &EncoderConfig,
    records: &[BatchRecord<'_>],
    cfg: &PipelineConfig,
    basis_override: Option<&ComponentBasis>,
) -> Result<ForwardArtifacts> {
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch needs >= 2 records, got {}",
            records.len()
        )));
    }
    let m = cfg.loss.m;
    for r in records {
        if r.h_perturbed.len() != m - 1 || r.d_perturbed.len() != m - 1 {
            return Err(Error::InvalidArgument(format!(
                "record {}: chains must carry m-1 = {} perturbed descriptions, got H={} D={}",
                r.id,
                m - 1,
                r.h_perturbed.len(),
                r.d_perturbed.len()
            )));
        }
    }

    let n = records.len();
    let mut f_lt = Vec::with_capacity(n);
    let mut f_st = Vec::with_capacity(n);
    let mut f_v = Vec::with_capacity(n);
    let mut lt_caches = Vec::with_capacity(n);
    let mut st_caches = Vec::with_capacity(n);
    let mut v_caches = Vec::with_capacity(n);
    for r in records {
        let (flt, clt) = encode_text(params, enc_cfg, r.long)?;
        let (fst, cst) = encode_text(params, enc_cfg, r.short)?;
        let (fv, cv) = encode_video(params, enc_cfg, r.frames)?;
        f_lt.push(flt);
        f_st.push(fst);
        f_v.push(fv);
        lt_caches.push(clt);
        st_caches.push(cst);
        v_caches.push(cv);
    }

    let basis = match basis_override {
        Some(b) => b.clone(),
        None => fit_batch_basis(&f_v)?,
    };

    let mut f_v_reduced = Vec::with_capacity(n);
    let mut retained_ks = Vec::with_capacity(n);
    let mut target_sims = Vec::with_capacity(n);
    for i in 0..n {
        let target = numerics::cosine_sim(&f_lt[i], &f_st[i])?;
        target_sims.push(target);
        let (f_hat, k) = if cfg.baseline_longclip {
            let k = cfg.fixed_k.min(basis.len()).max(1);
            (pce::pce_fixed(&basis, &f_v[i], k)?, k)
        } else {
            pce::tpcm(&basis, &f_v[i], target)?
        };
        f_v_reduced.push(f_hat);
        retained_ks.push(k);
    }

    let mut h_feats = Vec::with_capacity(n);
    let mut h_caches = Vec::with_capacity(n);
    let mut d_feats = Vec::with_capacity(n);
    let mut d_caches = Vec::with_capacity(n);
    let mut chain_sims_h = Vec::with_capacity(n);
    let mut chain_sims_d = Vec::with_capacity(n);
    for (i, r) in records.iter().enumerate() {
        let encode_chain = |descs: &[Description]| -> Result<ChainForward> {
            let mut feats = Vec::with_capacity(descs.len());
            let mut caches = Vec::with_capacity(descs.len());
            // Chain element 0 is the long description; its similarity uses
            // the already-computed feature.
            let mut sims = vec![numerics::cosine_sim(&f_lt[i], &f_v[i])?];
            for d in descs {
                let (f, c) = encode_text(params, enc_cfg, d)?;
                sims.push(numerics::cosine_sim(&f, &f_v[i])?);
                feats.push(f);
                caches.push(c);
            }
            Ok((feats, caches, sims))
        };
        let (hf, hc, hs) = encode_chain(r.h_perturbed)?;
        let (df, dc, ds) = encode_chain(r.d_perturbed)?;
        h_feats.push(hf);
        h_caches.push(hc);
        chain_sims_h.push(hs);
        d_feats.push(df);
        d_caches.push(dc);
        chain_sims_d.push(ds);
    }

    let batch = BatchFeatures {
        f_lt: f_lt.clone(),
        f_st: f_st.clone(),
        f_v: f_v.clone(),
        f_v_reduced: f_v_reduced.clone(),
        chain_sims_d: chain_sims_d.clone(),
        chain_sims_h: chain_sims_h.clone(),
    };
    let (terms, feature_grads) = total_loss(&batch, &cfg.loss)?;

    Ok(ForwardArtifacts {
        basis,
        f_lt,
        f_st,
        f_v,
        f_v_reduced,
        retained_ks,
        target_sims,
        lt_caches,
        st_caches,
        v_caches,
        h_feats,
        h_caches,
        d_feats,
        d_caches,
        chain_sims_h,
        chain_sims_d,
        terms,
        feature_grads,
    })
}

/// Backward a forwarded batch into encoder parameter gradients.
pub fn backward(
    params: &EncoderParams,
    enc_cfg: &EncoderConfig,
    art: &ForwardArtifacts,
) -> Result<EncoderGrads> {
    let n = art.f_lt.len();
    let d = enc_cfg.d;
    let mut grads = EncoderGrads::zeros(enc_cfg);
    for i in 0..n {
        let mut up_lt = art.feature_grads.d_f_lt[i].clone();
        let mut up_v = art.feature_grads.d_f_v[i].clone();

        // Reduced-feature gradient passes through the retained projection:
        // d f_hat / d f_v = sum_k b_k b_k^T over the first `retained` vectors.
        let g_hat = &art.feature_grads.d_f_v_reduced[i];
        for k in 0..art.retained_ks[i] {
            let b = art.basis.vector(k);
            let coeff = numerics::dot(b, g_hat);
            for j in 0..d {
                up_v[j] += coeff * b[j];
            }
        }

        // Chain similarity gradients. Element 0 of both chains is the long
        // description: its share flows into the long-text upstream.
        let apply_chain = |feats: &[Vec<f64>],
                               sim_grads: &[f64],
                               up_lt: &mut [f64],
                               up_v: &mut [f64]|
         -> Result<Vec<Vec<f64>>> {
            let mut per_elem_upstreams = Vec::with_capacity(feats.len());
            for (e, g_sim) in sim_grads.iter().enumerate() {
                let text_feat = if e == 0 { &art.f_lt[i] } else { &feats[e - 1] };
                let (_, d_text, d_vid) = cosine_with_grad(text_feat, &art.f_v[i])?;
                if e == 0 {
                    for j in 0..d {
                        up_lt[j] += g_sim * d_text[j];
                        up_v[j] += g_sim * d_vid[j];
                    }
                } else {
                    let mut up: Vec<f64> = vec![0.0; d];
                    for j in 0..d {
                        up[j] = g_sim * d_text[j];
                        up_v[j] += g_sim * d_vid[j];
                    }
                    per_elem_upstreams.push(up);
                }
            }
            Ok(per_elem_upstreams)
        };
        let h_ups = apply_chain(
            &art.h_feats[i],
            &art.feature_grads.d_chain_sims_h[i],
            &mut up_lt,
            &mut up_v,
        )?;
        let d_ups = apply_chain(
            &art.d_feats[i],
            &art.feature_grads.d_chain_sims_d[i],
            &mut up_lt,
            &mut up_v,
        )?;

        accumulate_text_backward(params, enc_cfg, &art.lt_caches[i], &up_lt, &mut grads)?;
        accumulate_text_backward(
            params,
            enc_cfg,
            &art.st_caches[i],
            &art.feature_grads.d_f_st[i],
            &mut grads,
        )?;
        for (cache, up) in art.h_caches[i].iter().zip(&h_ups) {
            accumulate_text_backward(params, enc_cfg, cache, up, &mut grads)?;
        }
        for (cache, up) in art.d_caches[i].iter().zip(&d_ups) {
            accumulate_text_backward(params, enc_cfg, cache, up, &mut grads)?;
        }
        accumulate_video_backward(enc_cfg, &art.v_caches[i], &up_v, &mut grads)?;
    }
    Ok(grads)
}
