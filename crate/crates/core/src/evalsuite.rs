//! Ranking-benchmark construction and evaluation: perturbation subsets,
//! the pairwise ranking score, Kendall tau-a, Spearman rank correlation,
//! and text/video retrieval recall.
//!
//! All metrics are reported on the x100 scale. Ground order is index
//! order: position 0 is the most faithful (or most detailed) description
//! and should score the highest similarity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Corpus, Lexicons};
use crate::encoders::{encode_text, encode_video, EncoderConfig, EncoderParams};
use crate::numerics::cosine_sim;
use crate::perturb::{hallucinate_chain, record_seed, ChainKind, DescriptionChain, PerturbConfig};
use crate::{Error, Result};

/// One benchmark subset: hallucination chains with `p` descriptions built
/// by altering `q` words per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvdrSubset {
    /// "pxq" label, e.g. "4x1".
    pub name: String,
    pub p: usize,
    pub q: usize,
    /// Records that failed the replacement-count precondition and were
    /// skipped during construction.
    pub skipped: usize,
    pub chains: Vec<DescriptionChain>,
}

/// Build one subset per q value; chains use per-record seeds derived from
/// (seed, q, record id), so construction is deterministic and records are
/// independent.
pub fn build_lvdr(
    corpus: &Corpus,
    p: usize,
    q_values: &[usize],
    seed: u64,
) -> Result<Vec<LvdrSubset>> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!(
            "subset chains need p >= 2 descriptions, got {p}"
        )));
    }
    let lex = Lexicons::builtin();
    let mut subsets = Vec::with_capacity(q_values.len());
    for &q in q_values {
        let q_base = seed ^ (q as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut chains = Vec::new();
        let mut skipped = 0usize;
        for rec in &corpus.records {
            let cfg = PerturbConfig {
                m: p,
                q,
                seed: record_seed(q_base, &rec.id, ChainKind::H),
            };
            match hallucinate_chain(&rec.id, &rec.long, &lex, &cfg) {
                Ok(chain) => chains.push(chain),
                Err(Error::Perturb(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        subsets.push(LvdrSubset {
            name: format!("{p}x{q}"),
            p,
            q,
            skipped,
            chains,
        });
    }
    Ok(subsets)
}

fn check_chain_len(sims: &[f64], op: &'static str) -> Result<()> {
    if sims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{op} needs >= 2 similarities, got {}",
            sims.len()
        )));
    }
    if sims.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("{op}: non-finite similarity")));
    }
    Ok(())
}

/// Pairwise ranking score in [0, 100]: the fraction of pairs i < j whose
/// similarities are strictly ordered sims[i] > sims[j]. Ties score 0 for
/// the pair.
pub fn ranking_score(sims: &[f64]) -> Result<f64> {
    check_chain_len(sims, "ranking_score")?;
    let m = sims.len();
    let mut correct = 0usize;
    for i in 0..m - 1 {
        for j in i + 1..m {
            if sims[i] > sims[j] {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / (m * (m - 1) / 2) as f64)
}

/// Kendall tau-a in [-100, 100] against the ground (index) order:
/// concordant minus discordant pairs over all pairs; ties contribute 0.
pub fn kendall_tau(sims: &[f64]) -> Result<f64> {
    check_chain_len(sims, "kendall_tau")?;
    let m = sims.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..m - 1 {
        for j in i + 1..m {
            if sims[i] > sims[j] {
                concordant += 1;
            } else if sims[i] < sims[j] {
                discordant += 1;
            }
        }
    }
    Ok(100.0 * (concordant - discordant) as f64 / (m * (m - 1) / 2) as f64)
}

/// Spearman rank correlation in [-100, 100] against ground ranks 1..m:
/// `100 (1 - 6 sum d_i^2 / (m (m^2 - 1)))` with average ranks for ties.
pub fn spearman(sims: &[f64]) -> Result<f64> {
    check_chain_len(sims, "spearman")?;
    let m = sims.len();
    let ranks = average_ranks_descending(sims);
    let d_sq: f64 = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let d = r - (i + 1) as f64;
            d * d
        })
        .sum();
    let denom = (m * (m * m - 1)) as f64;
    Ok(100.0 * (1.0 - 6.0 * d_sq / denom))
}

/// Rank of each entry when sorting descending, averaging ranks over ties.
fn average_ranks_descending(sims: &[f64]) -> Vec<f64> {
    let m = sims.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; m];
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && sims[order[j + 1]] == sims[order[i]] {
            j += 1;
        }
        // Positions i..=j share the value; average rank is the mean of
        // their 1-based positions.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// RS/KT/SC for one similarity chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainScore {
    pub video_id: String,
    pub sims: Vec<f64>,
    pub rs: f64,
    pub kt: f64,
    pub sc: f64,
}

/// Score one chain's similarities against the ground index order.
pub fn score_chain(video_id: &str, sims: &[f64]) -> Result<ChainScore> {
    Ok(ChainScore {
        video_id: video_id.to_string(),
        sims: sims.to_vec(),
        rs: ranking_score(sims)?,
        kt: kendall_tau(sims)?,
        sc: spearman(sims)?,
    })
}

/// Per-subset metric means on the x100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetScores {
    pub rs: f64,
    pub kt: f64,
    pub sc: f64,
}

/// Ranking evaluation output: per-subset means plus per-chain raw scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub subsets: BTreeMap<String, SubsetScores>,
    pub per_chain: BTreeMap<String, Vec<ChainScore>>,
    pub checkpoint: String,
}

/// Evaluate description-ranking subsets with a model: per chain, the cosine
/// between each description feature and the video feature, scored against
/// the ground order; per-subset chain-level means.
pub fn eval_lvdr(
    params: &EncoderParams,
    enc_cfg: &EncoderConfig,
    corpus: &Corpus,
    subsets: &[LvdrSubset],
    checkpoint_id: &str,
) -> Result<RankingReport> {
    params.validate(enc_cfg)?;
    // Video features once per referenced record.
    let mut video_feats: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for subset in subsets {
        for chain in &subset.chains {
            if video_feats.contains_key(chain.video_id.as_str()) {
                continue;
            }
            let rec = corpus.record_by_id(&chain.video_id).ok_or_else(|| {
                Error::Validation(format!(
                    "chain references unknown record {}",
                    chain.video_id
                ))
            })?;
            let (fv, _) = encode_video(params, enc_cfg, &rec.frames)?;
            video_feats.insert(chain.video_id.as_str(), fv);
        }
    }

    let mut report = RankingReport {
        subsets: BTreeMap::new(),
        per_chain: BTreeMap::new(),
        checkpoint: checkpoint_id.to_string(),
    };
    for subset in subsets {
        let mut scores = Vec::with_capacity(subset.chains.len());
        for chain in &subset.chains {
            let fv = &video_feats[chain.video_id.as_str()];
            let mut sims = Vec::with_capacity(chain.descs.len());
            for desc in &chain.descs {
                let (ft, _) = encode_text(params, enc_cfg, desc)?;
                sims.push(cosine_sim(&ft, fv)?);
            }
            scores.push(score_chain(&chain.video_id, &sims)?);
        }
        if scores.is_empty() {
            return Err(Error::Validation(format!(
                "subset {} has no chains",
                subset.name
            )));
        }
        let n = scores.len() as f64;
        let mean = |f: fn(&ChainScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
        report.subsets.insert(
            subset.name.clone(),
            SubsetScores {
                rs: mean(|s| s.rs),
                kt: mean(|s| s.kt),
                sc: mean(|s| s.sc),
            },
        );
        report.per_chain.insert(subset.name.clone(), scores);
    }
    Ok(report)
}

/// Recall at one cutoff, as a percentage of queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    T2V,
    V2T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub recall: Vec<RecallAtK>,
    pub pool: usize,
}

/// R@k from a full query-by-candidate similarity matrix where the ground
/// truth for query i is candidate i. Ties break by stable candidate order.
pub fn recall_from_sims(sims: &[Vec<f64>], ks: &[usize]) -> Result<Vec<RecallAtK>> {
    let n = sims.len();
    if n == 0 {
        return Err(Error::EmptyInput("recall_from_sims"));
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if max_k > n {
        return Err(Error::InvalidArgument(format!(
            "pool size {n} smaller than max k {max_k}"
        )));
    }
    let mut ranks = Vec::with_capacity(n);
    for (i, row) in sims.iter().enumerate() {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                context: "recall_from_sims row",
                expected: n,
                got: row.len(),
            });
        }
        // 1-based rank of candidate i under (similarity desc, index asc).
        let target = row[i];
        let better = row
            .iter()
            .enumerate()
            .filter(|&(j, &s)| s > target || (s == target && j < i))
            .count();
        ranks.push(better + 1);
    }
    let mut ks_sorted = ks.to_vec();
    ks_sorted.sort_unstable();
    ks_sorted.dedup();
    Ok(ks_sorted
        .into_iter()
        .map(|k| RecallAtK {
            k,
            pct: 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64,
        })
        .collect())
}

/// Text-to-video and video-to-text retrieval over a corpus: long
/// descriptions are the text side; ranking is by cosine similarity.
pub fn eval_retrieval(
    params: &EncoderParams,
    enc_cfg: &EncoderConfig,
    corpus: &Corpus,
    ks: &[usize],
) -> Result<(RetrievalReport, RetrievalReport)> {
    params.validate(enc_cfg)?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("eval_retrieval corpus"));
    }
    let n = corpus.len();
    let mut text_feats = Vec::with_capacity(n);
    let mut video_feats = Vec::with_capacity(n);
    for rec in &corpus.records {
        text_feats.push(encode_text(params, enc_cfg, &rec.long)?.0);
        video_feats.push(encode_video(params, enc_cfg, &rec.frames)?.0);
    }
    let t2v_sims: Vec<Vec<f64>> = text_feats
        .iter()
        .map(|t| {
            video_feats
                .iter()
                .map(|v| cosine_sim(t, v))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let v2t_sims: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| t2v_sims[j][i]).collect())
        .collect();
    Ok((
        RetrievalReport {
            direction: Direction::T2V,
            recall: recall_from_sims(&t2v_sims, ks)?,
            pool: n,
        },
        RetrievalReport {
            direction: Direction::V2T,
            recall: recall_from_sims(&v2t_sims, ks)?,
            pool: n,
        },
    ))
}
