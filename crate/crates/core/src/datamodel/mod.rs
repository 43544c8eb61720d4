//! Corpus representation: tagged descriptions, per-video frame features,
//! file formats, and the synthetic corpus generator.

mod generate;
mod io;
mod lexicon;

pub use generate::{gen_synthetic_corpus, GenConfig};
pub use io::{load_corpus, read_frames_file, save_corpus, save_corpus_with_sidecar, write_frames_file};
pub use lexicon::Lexicons;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Closed set of token categories the perturbation engine understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenCategory {
    Noun,
    Verb,
    Color,
    Numeral,
    Direction,
    Adjective,
    Other,
}

impl TokenCategory {
    /// Categories eligible for hallucination replacement.
    pub fn replaceable(self) -> bool {
        matches!(
            self,
            TokenCategory::Noun
                | TokenCategory::Verb
                | TokenCategory::Color
                | TokenCategory::Numeral
                | TokenCategory::Direction
        )
    }
}

/// One surface word with its category tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    #[serde(rename = "w")]
    pub surface: String,
    #[serde(rename = "c")]
    pub category: TokenCategory,
}

impl TaggedToken {
    pub fn new(surface: impl Into<String>, category: TokenCategory) -> Self {
        Self { surface: surface.into(), category }
    }
}

/// A tokenized, sentence-segmented description.
///
/// `text` is always the space-join of all token surfaces; `sentence_bounds`
/// partitions the token range into half-open `[start, end)` sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub text: String,
    pub tokens: Vec<TaggedToken>,
    #[serde(rename = "sents")]
    pub sentence_bounds: Vec<(usize, usize)>,
}

impl Description {
    /// Build from sentences of tagged tokens; text and bounds are derived.
    pub fn from_sentences(sentences: Vec<Vec<TaggedToken>>) -> Self {
        let mut tokens = Vec::new();
        let mut sentence_bounds = Vec::new();
        for sent in sentences {
            let start = tokens.len();
            tokens.extend(sent);
            sentence_bounds.push((start, tokens.len()));
        }
        let text = join_surfaces(&tokens);
        Self { text, tokens, sentence_bounds }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_bounds.len()
    }

    /// Check the structural invariants; `context` names the owner in errors.
    pub fn validate(&self, context: &str) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation(format!(
                "{context}: description has no tokens"
            )));
        }
        if self.tokens.iter().any(|t| t.surface.is_empty()) {
            return Err(Error::Validation(format!(
                "{context}: empty token surface"
            )));
        }
        if join_surfaces(&self.tokens) != self.text {
            return Err(Error::Validation(format!(
                "{context}: text does not equal the space-join of token surfaces"
            )));
        }
        let mut cursor = 0usize;
        for &(start, end) in &self.sentence_bounds {
            if start != cursor || end <= start {
                return Err(Error::Validation(format!(
                    "{context}: sentence bounds do not partition tokens"
                )));
            }
            cursor = end;
        }
        if cursor != self.tokens.len() {
            return Err(Error::Validation(format!(
                "{context}: sentence bounds do not cover all tokens"
            )));
        }
        Ok(())
    }
}

fn join_surfaces(tokens: &[TaggedToken]) -> String {
    tokens
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// One video-description sample: frame features plus its long and short
/// descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub frames: Vec<Vec<f32>>,
    pub long: Description,
    pub short: Description,
}

impl SampleRecord {
    pub fn validate(&self, d_in: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Validation(format!(
                "record {}: no frames",
                self.id
            )));
        }
        for f in &self.frames {
            if f.len() != d_in {
                return Err(Error::Validation(format!(
                    "record {}: frame vector of length {} (expected {d_in})",
                    self.id,
                    f.len()
                )));
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "record {}: non-finite frame value",
                    self.id
                )));
            }
        }
        self.long.validate(&format!("record {} long", self.id))?;
        self.short.validate(&format!("record {} short", self.id))?;
        Ok(())
    }
}

/// Provenance carried in memory (not part of the serialized corpus line
/// format): how the corpus came to be.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusMeta {
    pub seed: Option<u64>,
    pub config_echo: Option<String>,
    pub source: String,
}

/// A full corpus: records sharing one frame-feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<SampleRecord>,
    pub d_in: usize,
    pub meta: CorpusMeta,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record_by_id(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Validation("corpus has no records".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate record id {}", r.id)));
            }
            r.validate(self.d_in)?;
        }
        Ok(())
    }
}

/// FNV-1a 64-bit hash. Pure function of the input bytes; fixed across runs
/// and platforms. Used for token bucketing and per-record seed derivation.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sentence_desc() -> Description {
        Description::from_sentences(vec![
            vec![
                TaggedToken::new("the", TokenCategory::Other),
                TaggedToken::new("red", TokenCategory::Color),
                TaggedToken::new("dog", TokenCategory::Noun),
            ],
            vec![
                TaggedToken::new("it", TokenCategory::Other),
                TaggedToken::new("jumps", TokenCategory::Other),
            ],
        ])
    }

    #[test]
    fn description_text_is_space_join() {
        let d = two_sentence_desc();
        assert_eq!(d.text, "the red dog it jumps");
        assert_eq!(d.sentence_bounds, vec![(0, 3), (3, 5)]);
        d.validate("test").unwrap();
    }

    #[test]
    fn description_validation_catches_text_drift() {
        let mut d = two_sentence_desc();
        d.text = "something else".into();
        assert!(d.validate("test").is_err());
    }

    #[test]
    fn description_validation_catches_bad_bounds() {
        let mut d = two_sentence_desc();
        d.sentence_bounds = vec![(0, 2), (3, 5)];
        assert!(d.validate("test").is_err());
        d.sentence_bounds = vec![(0, 3)];
        assert!(d.validate("test").is_err());
    }

    #[test]
    fn fnv_matches_reference_values() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let d = two_sentence_desc();
        let rec = SampleRecord {
            id: "x".into(),
            frames: vec![vec![0.0; 4]],
            long: d.clone(),
            short: d,
        };
        let corpus = Corpus {
            records: vec![rec.clone(), rec],
            d_in: 4,
            meta: CorpusMeta::default(),
        };
        let err = corpus.validate().unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }
}
