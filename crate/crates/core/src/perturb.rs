//! Rule-based description perturbation: hallucination chains (same-category
//! word replacement) and detail-degradation chains (unit deletion).
//!
//! Hallucination: each step copies the previous description and replaces q
//! not-previously-touched category-word positions with a different word of
//! the same category, so the hallucination degree strictly accumulates.
//!
//! Degradation: each step removes one unit from a tiered pool, adjectives
//! first, then numerals, then whole non-first sentences, so token counts
//! strictly decrease.
//!
//! Both are pure functions of (description, lexicons, config): per-record
//! seeds are derived as `base_seed ^ fnv1a64(id) ^ kind_salt`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{fnv1a64, Corpus, Description, Lexicons, TaggedToken, TokenCategory};
use crate::{Error, Result};

/// Chain flavor: H accumulates hallucinations, D sheds detail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainKind {
    H,
    D,
}

/// One recorded edit along a chain. Positions are token indices into the
/// description the edit was applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    Replace {
        step: usize,
        pos: usize,
        old: String,
        new: String,
    },
    DeleteToken {
        step: usize,
        pos: usize,
        old: String,
    },
    DeleteSentence {
        step: usize,
        start: usize,
        end: usize,
        text: String,
    },
}

/// An ordered chain of descriptions for one video; index 0 is the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionChain {
    pub video_id: String,
    pub kind: ChainKind,
    pub m: usize,
    pub q: usize,
    pub descs: Vec<Description>,
    pub edits: Vec<Edit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Chain length including the original.
    pub m: usize,
    /// Words altered per hallucination step.
    pub q: usize,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { m: 5, q: 1, seed: 0 }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!(
                "chain length m must be >= 2, got {}",
                self.m
            )));
        }
        if self.q < 1 {
            return Err(Error::InvalidArgument(format!(
                "q must be >= 1, got {}",
                self.q
            )));
        }
        Ok(())
    }
}

/// Seed for one record's chain stream.
pub fn record_seed(base: u64, video_id: &str, kind: ChainKind) -> u64 {
    let salt = match kind {
        ChainKind::H => 0x48,
        ChainKind::D => 0x44,
    };
    base ^ fnv1a64(video_id.as_bytes()) ^ salt
}

/// Build a hallucination chain: m descriptions where step i replaces q
/// fresh eligible positions with different same-category words.
pub fn hallucinate_chain(
    video_id: &str,
    desc: &Description,
    lex: &Lexicons,
    cfg: &PerturbConfig,
) -> Result<DescriptionChain> {
    cfg.validate()?;
    desc.validate(&format!("hallucinate_chain input for {video_id}"))?;
    let mut available: Vec<usize> = desc
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.category.replaceable() && lex.contains(&t.surface, t.category))
        .map(|(i, _)| i)
        .collect();
    let need = cfg.q * (cfg.m - 1);
    if available.len() < need {
        return Err(Error::Perturb(format!(
            "record {video_id}: needs {need} replaceable positions for m={} q={}, found {} ({} short)",
            cfg.m,
            cfg.q,
            available.len(),
            need - available.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut descs = vec![desc.clone()];
    let mut edits = Vec::new();
    for step in 1..cfg.m {
        let mut current = descs[step - 1].clone();
        for _ in 0..cfg.q {
            let slot = rng.random_range(0..available.len());
            let pos = available.remove(slot);
            let token = &current.tokens[pos];
            let words = lex.words(token.category);
            let cur_idx = words
                .iter()
                .position(|w| *w == token.surface)
                .expect("eligibility guarantees lexicon membership");
            // Uniform over the category excluding the current word.
            let mut pick = rng.random_range(0..words.len() - 1);
            if pick >= cur_idx {
                pick += 1;
            }
            let new_word = words[pick].clone();
            edits.push(Edit::Replace {
                step,
                pos,
                old: token.surface.clone(),
                new: new_word.clone(),
            });
            current.tokens[pos].surface = new_word;
        }
        current.text = rejoin(&current.tokens);
        descs.push(current);
    }

    Ok(DescriptionChain {
        video_id: video_id.to_string(),
        kind: ChainKind::H,
        m: cfg.m,
        q: cfg.q,
        descs,
        edits,
    })
}

/// Build a detail-degradation chain: m descriptions where each step deletes
/// one unit from the tiered pool (adjective, then numeral, then a whole
/// non-first sentence).
pub fn degrade_chain(
    video_id: &str,
    desc: &Description,
    cfg: &PerturbConfig,
) -> Result<DescriptionChain> {
    cfg.validate()?;
    desc.validate(&format!("degrade_chain input for {video_id}"))?;
    let n_adj = count_category(desc, TokenCategory::Adjective);
    let n_num = count_category(desc, TokenCategory::Numeral);
    let n_sent = desc.sentence_count();
    let units = n_adj + n_num + n_sent.saturating_sub(1);
    if units < cfg.m - 1 {
        return Err(Error::Perturb(format!(
            "record {video_id}: needs {} removable units for m={}, found {units}",
            cfg.m - 1,
            cfg.m
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut descs = vec![desc.clone()];
    let mut edits = Vec::new();
    for step in 1..cfg.m {
        let prev = &descs[step - 1];
        let mut sentences = split_sentences(prev);
        let adj_positions = category_positions(prev, TokenCategory::Adjective);
        let num_positions = category_positions(prev, TokenCategory::Numeral);
        if !adj_positions.is_empty() {
            let pos = adj_positions[rng.random_range(0..adj_positions.len())];
            edits.push(Edit::DeleteToken {
                step,
                pos,
                old: prev.tokens[pos].surface.clone(),
            });
            delete_token(&mut sentences, pos);
        } else if !num_positions.is_empty() {
            let pos = num_positions[rng.random_range(0..num_positions.len())];
            edits.push(Edit::DeleteToken {
                step,
                pos,
                old: prev.tokens[pos].surface.clone(),
            });
            delete_token(&mut sentences, pos);
        } else if sentences.len() > 1 {
            let si = rng.random_range(1..sentences.len());
            let (start, end) = prev.sentence_bounds[si];
            edits.push(Edit::DeleteSentence {
                step,
                start,
                end,
                text: sentences[si]
                    .iter()
                    .map(|t| t.surface.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
            });
            sentences.remove(si);
        } else {
            return Err(Error::Perturb(format!(
                "record {video_id}: ran out of removable units at step {step}"
            )));
        }
        sentences.retain(|s| !s.is_empty());
        let next = Description::from_sentences(sentences);
        debug_assert!(next.token_count() < prev.token_count());
        descs.push(next);
    }

    Ok(DescriptionChain {
        video_id: video_id.to_string(),
        kind: ChainKind::D,
        m: cfg.m,
        q: cfg.q,
        descs,
        edits,
    })
}

/// H and D chains for every corpus record with per-record derived seeds.
pub fn chains_for_corpus(
    corpus: &Corpus,
    lex: &Lexicons,
    cfg: &PerturbConfig,
) -> Result<(Vec<DescriptionChain>, Vec<DescriptionChain>)> {
    let mut h_chains = Vec::with_capacity(corpus.len());
    let mut d_chains = Vec::with_capacity(corpus.len());
    for rec in &corpus.records {
        let h_cfg = PerturbConfig {
            seed: record_seed(cfg.seed, &rec.id, ChainKind::H),
            ..cfg.clone()
        };
        let d_cfg = PerturbConfig {
            seed: record_seed(cfg.seed, &rec.id, ChainKind::D),
            ..cfg.clone()
        };
        h_chains.push(hallucinate_chain(&rec.id, &rec.long, lex, &h_cfg)?);
        d_chains.push(degrade_chain(&rec.id, &rec.long, &d_cfg)?);
    }
    Ok((h_chains, d_chains))
}

/// Write chains as JSONL, one chain per line.
pub fn save_chains(chains: &[DescriptionChain], path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    for c in chains {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Load chains from JSONL, validating every description.
pub fn load_chains(path: impl AsRef<Path>) -> Result<Vec<DescriptionChain>> {
    let file = fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut chains = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let chain: DescriptionChain = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if chain.descs.len() != chain.m {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!(
                    "chain for {} has {} descriptions, m says {}",
                    chain.video_id,
                    chain.descs.len(),
                    chain.m
                ),
            });
        }
        for (di, d) in chain.descs.iter().enumerate() {
            d.validate(&format!("chain {} desc {di}", chain.video_id))?;
        }
        chains.push(chain);
    }
    Ok(chains)
}

fn rejoin(tokens: &[TaggedToken]) -> String {
    tokens
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn count_category(desc: &Description, cat: TokenCategory) -> usize {
    desc.tokens.iter().filter(|t| t.category == cat).count()
}

fn category_positions(desc: &Description, cat: TokenCategory) -> Vec<usize> {
    desc.tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.category == cat)
        .map(|(i, _)| i)
        .collect()
}

fn split_sentences(desc: &Description) -> Vec<Vec<TaggedToken>> {
    desc.sentence_bounds
        .iter()
        .map(|&(s, e)| desc.tokens[s..e].to_vec())
        .collect()
}

fn delete_token(sentences: &mut [Vec<TaggedToken>], global_pos: usize) {
    let mut offset = 0;
    for sent in sentences.iter_mut() {
        if global_pos < offset + sent.len() {
            sent.remove(global_pos - offset);
            return;
        }
        offset += sent.len();
    }
    panic!("delete_token position {global_pos} out of range");
}
