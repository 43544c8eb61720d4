//! Training objectives with exact gradients w.r.t. their feature inputs.
//!
//! - `l_cl`: symmetric InfoNCE over a batch, diagonal pairs positive,
//!   off-diagonal in-batch negatives, averaged over both directions.
//! - `ddr_loss` / `hdr_loss`: mean pairwise hinge over an ordered
//!   similarity chain with a minimum-distinction gap.
//! - `total_loss`: the weighted sum of the contrastive terms over
//!   (long text, video) and (short text, reduced video) plus the two
//!   ranking terms averaged over the batch's chains.
//!
//! Similarities are true cosines, so inputs need not be unit norm (the
//! reduced video feature is not re-normalized); gradients include the
//! full cosine Jacobian and compose exactly with the encoder backward.

use serde::{Deserialize, Serialize};

use crate::numerics::{self, stable_logsumexp};
use crate::{Error, Result};

/// Loss weights and shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// InfoNCE temperature.
    pub tau: f64,
    /// Weight of the short-text/reduced-video contrastive term.
    pub alpha1: f64,
    /// Weight of the detail-ranking term.
    pub alpha2: f64,
    /// Weight of the hallucination-ranking term.
    pub alpha3: f64,
    /// Minimum similarity gap for detail ranking.
    pub alpha_d: f64,
    /// Minimum similarity gap for hallucination ranking.
    pub alpha_h: f64,
    /// Chain length (original description plus m-1 perturbed steps).
    pub m: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            alpha1: 0.1,
            alpha2: 1.0,
            alpha3: 10.0,
            alpha_d: 0.0,
            alpha_h: 0.0,
            m: 5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha_d", self.alpha_d),
            ("alpha_h", self.alpha_h),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!(
                "chain length m must be >= 2, got {}",
                self.m
            )));
        }
        Ok(())
    }
}

/// Cosine similarity with gradients w.r.t. both inputs:
/// `d sim / d a = (b_hat - sim * a_hat) / |a|` and symmetrically for `b`.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine_with_grad",
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = numerics::norm(a);
    let nb = numerics::norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine_with_grad"));
    }
    let s = numerics::dot(a, b) / (na * nb);
    let d_a: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| (bi / nb - s * ai / na) / na)
        .collect();
    let d_b: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| (ai / na - s * bi / nb) / nb)
        .collect();
    Ok((s, d_a, d_b))
}

/// Gradients of `l_cl` w.r.t. the two feature sets.
#[derive(Debug, Clone)]
pub struct ClGrads {
    pub d_text: Vec<Vec<f64>>,
    pub d_vision: Vec<Vec<f64>>,
}

/// Symmetric InfoNCE: positives on the diagonal, in-batch negatives off it,
/// both text-to-vision and vision-to-text directions averaged with 1/(2N).
pub fn l_cl(
    text_feats: &[Vec<f64>],
    vision_feats: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, ClGrads)> {
    let n = text_feats.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "l_cl needs a batch of >= 2 (no negatives otherwise), got {n}"
        )));
    }
    if vision_feats.len() != n {
        return Err(Error::DimensionMismatch {
            context: "l_cl batch sizes",
            expected: n,
            got: vision_feats.len(),
        });
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }

    // Cosine matrix and its per-entry input gradients.
    let mut sims = vec![vec![0.0; n]; n];
    let mut d_sim_text = vec![vec![Vec::new(); n]; n];
    let mut d_sim_vision = vec![vec![Vec::new(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let (s, d_t, d_v) = cosine_with_grad(&text_feats[i], &vision_feats[j])?;
            sims[i][j] = s;
            d_sim_text[i][j] = d_t;
            d_sim_vision[i][j] = d_v;
        }
    }

    // Loss: (1/2N) sum_i [ -logit_ii + lse_j(logit_ij) ] + [ -logit_ii + lse_j(logit_ji) ].
    let mut loss = 0.0;
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| sims[i][j] / tau).collect();
        let col: Vec<f64> = (0..n).map(|j| sims[j][i] / tau).collect();
        loss += -row[i] + stable_logsumexp(&row)?;
        loss += -col[i] + stable_logsumexp(&col)?;
    }
    loss /= 2.0 * n as f64;

    // dLoss/dS = (1/(2N tau)) [(P - I) + (Q - I)] with row/column softmaxes.
    let mut g_s = vec![vec![0.0; n]; n];
    let scale = 1.0 / (2.0 * n as f64 * tau);
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| sims[i][j] / tau).collect();
        let lse = stable_logsumexp(&row)?;
        for j in 0..n {
            let p = (row[j] - lse).exp();
            g_s[i][j] += scale * (p - if i == j { 1.0 } else { 0.0 });
        }
    }
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| sims[i][j] / tau).collect();
        let lse = stable_logsumexp(&col)?;
        for i in 0..n {
            let q = (col[i] - lse).exp();
            g_s[i][j] += scale * (q - if i == j { 1.0 } else { 0.0 });
        }
    }

    // Chain through the cosine Jacobians.
    let d = text_feats[0].len();
    let mut d_text = vec![vec![0.0; d]; n];
    let mut d_vision = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let g = g_s[i][j];
            if g == 0.0 {
                continue;
            }
            for k in 0..d {
                d_text[i][k] += g * d_sim_text[i][j][k];
                d_vision[j][k] += g * d_sim_vision[i][j][k];
            }
        }
    }

    Ok((loss, ClGrads { d_text, d_vision }))
}

/// Mean pairwise hinge over an ordered similarity chain: for every i < j,
/// `relu(alpha - (sims[i] - sims[j]))`, averaged over the m(m-1)/2 pairs.
/// The subgradient at an exactly-zero hinge argument is 0 (inactive).
fn ranking_hinge(sims: &[f64], alpha: f64, op: &'static str) -> Result<(f64, Vec<f64>)> {
    let m = sims.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "{op} needs a chain of >= 2 similarities, got {m}"
        )));
    }
    if sims.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("{op}: non-finite similarity")));
    }
    let n_pairs = (m * (m - 1) / 2) as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; m];
    for i in 0..m - 1 {
        for j in i + 1..m {
            let margin = alpha - (sims[i] - sims[j]);
            if margin > 0.0 {
                loss += margin;
                grads[i] -= 1.0 / n_pairs;
                grads[j] += 1.0 / n_pairs;
            }
        }
    }
    Ok((loss / n_pairs, grads))
}

/// Detail-ranking hinge: `sims` ordered most-detailed-first.
pub fn ddr_loss(sims: &[f64], alpha_d: f64) -> Result<(f64, Vec<f64>)> {
    ranking_hinge(sims, alpha_d, "ddr_loss")
}

/// Hallucination-ranking hinge: `sims` ordered least-hallucinated-first.
pub fn hdr_loss(sims: &[f64], alpha_h: f64) -> Result<(f64, Vec<f64>)> {
    ranking_hinge(sims, alpha_h, "hdr_loss")
}

/// All operands of the total training objective for one batch.
#[derive(Debug, Clone)]
pub struct BatchFeatures {
    /// Long-text features, N x d.
    pub f_lt: Vec<Vec<f64>>,
    /// Short-text features, N x d.
    pub f_st: Vec<Vec<f64>>,
    /// Video features, N x d.
    pub f_v: Vec<Vec<f64>>,
    /// Component-reduced video features, N x d (possibly non-unit norm).
    pub f_v_reduced: Vec<Vec<f64>>,
    /// Per-record detail-chain similarities, N x m, most-detailed-first.
    pub chain_sims_d: Vec<Vec<f64>>,
    /// Per-record hallucination-chain similarities, N x m,
    /// least-hallucinated-first.
    pub chain_sims_h: Vec<Vec<f64>>,
}

impl BatchFeatures {
    fn validate(&self, cfg: &LossConfig) -> Result<()> {
        let n = self.f_lt.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch needs >= 2 records for contrastive terms, got {n}"
            )));
        }
        for (name, set) in [
            ("f_st", &self.f_st),
            ("f_v", &self.f_v),
            ("f_v_reduced", &self.f_v_reduced),
        ] {
            if set.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {} rows, batch has {n}",
                    set.len()
                )));
            }
        }
        let d = self.f_lt[0].len();
        for set in [&self.f_lt, &self.f_st, &self.f_v, &self.f_v_reduced] {
            if set.iter().any(|f| f.len() != d) {
                return Err(Error::DimensionMismatch {
                    context: "BatchFeatures feature dim",
                    expected: d,
                    got: set.iter().map(|f| f.len()).find(|&l| l != d).unwrap_or(d),
                });
            }
        }
        for (name, chains) in [("chain_sims_d", &self.chain_sims_d), ("chain_sims_h", &self.chain_sims_h)] {
            if chains.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {} rows, batch has {n}",
                    chains.len()
                )));
            }
            if chains.iter().any(|c| c.len() != cfg.m) {
                return Err(Error::InvalidArgument(format!(
                    "{name} rows must have length m = {}",
                    cfg.m
                )));
            }
        }
        Ok(())
    }
}

/// Per-term values of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub cl_long: f64,
    pub cl_short: f64,
    pub ddr: f64,
    pub hdr: f64,
}

/// Gradients of the total objective w.r.t. every feature operand.
#[derive(Debug, Clone)]
pub struct FeatureGrads {
    pub d_f_lt: Vec<Vec<f64>>,
    pub d_f_st: Vec<Vec<f64>>,
    pub d_f_v: Vec<Vec<f64>>,
    pub d_f_v_reduced: Vec<Vec<f64>>,
    pub d_chain_sims_d: Vec<Vec<f64>>,
    pub d_chain_sims_h: Vec<Vec<f64>>,
}

/// Weighted sum of the four objective terms; the ranking terms are
/// arithmetic means over the batch's chains so the loss scale is
/// batch-size-invariant.
pub fn total_loss(batch: &BatchFeatures, cfg: &LossConfig) -> Result<(LossTerms, FeatureGrads)> {
    cfg.validate()?;
    batch.validate(cfg)?;
    let n = batch.f_lt.len();

    let (cl_long, g_long) = l_cl(&batch.f_lt, &batch.f_v, cfg.tau)?;
    let (cl_short, g_short) = l_cl(&batch.f_st, &batch.f_v_reduced, cfg.tau)?;

    let inv_n = 1.0 / n as f64;
    let mut ddr = 0.0;
    let mut hdr = 0.0;
    let mut d_chain_sims_d = Vec::with_capacity(n);
    let mut d_chain_sims_h = Vec::with_capacity(n);
    for row in &batch.chain_sims_d {
        let (l, g) = ddr_loss(row, cfg.alpha_d)?;
        ddr += l * inv_n;
        d_chain_sims_d.push(g.iter().map(|x| x * cfg.alpha2 * inv_n).collect());
    }
    for row in &batch.chain_sims_h {
        let (l, g) = hdr_loss(row, cfg.alpha_h)?;
        hdr += l * inv_n;
        d_chain_sims_h.push(g.iter().map(|x| x * cfg.alpha3 * inv_n).collect());
    }

    let total = cl_long + cfg.alpha1 * cl_short + cfg.alpha2 * ddr + cfg.alpha3 * hdr;
    let scale_rows = |rows: &[Vec<f64>], s: f64| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().map(|x| x * s).collect())
            .collect()
    };
    let grads = FeatureGrads {
        d_f_lt: g_long.d_text,
        d_f_st: scale_rows(&g_short.d_text, cfg.alpha1),
        d_f_v: g_long.d_vision,
        d_f_v_reduced: scale_rows(&g_short.d_vision, cfg.alpha1),
        d_chain_sims_d,
        d_chain_sims_h,
    };
    if !total.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "total loss is non-finite: {total}"
        )));
    }
    Ok((
        LossTerms {
            total,
            cl_long,
            cl_short,
            ddr,
            hdr,
        },
        grads,
    ))
}
