//! Synthetic corpus generator: latent scenes rendered as one-hot frame
//! features and templated long/short descriptions.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicons, OBJECT_NOUN_COUNT};
use super::{Corpus, CorpusMeta, Description, SampleRecord, TaggedToken, TokenCategory};
use crate::{Error, Result};

/// Width of each one-hot attribute block in the frame feature vector.
pub const ATTR_BLOCK: usize = 8;
/// Scene attribute slots, in frame-block order: object noun, action verb,
/// color, numeral, direction, background noun.
pub const ATTR_SLOTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_samples: usize,
    pub n_frames: usize,
    pub d_in: usize,
    pub noise_std: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            n_frames: 8,
            d_in: 64,
            noise_std: 0.05,
        }
    }
}

/// A latent scene: indices into the slot domains.
struct Scene {
    object: usize,
    verb: usize,
    color: usize,
    numeral: usize,
    direction: usize,
    background: usize,
    adj_a: usize,
    adj_b: usize,
}

impl Scene {
    fn draw(rng: &mut ChaCha8Rng, lex: &Lexicons) -> Self {
        let n_verbs = lex.words(TokenCategory::Verb).len().min(ATTR_BLOCK);
        let n_colors = lex.words(TokenCategory::Color).len().min(ATTR_BLOCK);
        let n_numerals = lex.words(TokenCategory::Numeral).len().min(ATTR_BLOCK);
        let n_dirs = lex.words(TokenCategory::Direction).len().min(ATTR_BLOCK);
        let n_adjs = lex.words(TokenCategory::Adjective).len();
        let object = rng.random_range(0..OBJECT_NOUN_COUNT);
        let verb = rng.random_range(0..n_verbs);
        let color = rng.random_range(0..n_colors);
        let numeral = rng.random_range(0..n_numerals);
        let direction = rng.random_range(0..n_dirs);
        let background = rng.random_range(0..ATTR_BLOCK.min(lex.words(TokenCategory::Noun).len() - OBJECT_NOUN_COUNT));
        let adj_a = rng.random_range(0..n_adjs);
        // Second adjective distinct from the first.
        let mut adj_b = rng.random_range(0..n_adjs - 1);
        if adj_b >= adj_a {
            adj_b += 1;
        }
        Self { object, verb, color, numeral, direction, background, adj_a, adj_b }
    }

    /// Frame-block one-hot indices in slot order.
    fn block_indices(&self) -> [usize; ATTR_SLOTS] {
        [
            self.object,
            self.verb,
            self.color,
            self.numeral,
            self.direction,
            self.background,
        ]
    }
}

fn tok(surface: &str, category: TokenCategory) -> TaggedToken {
    TaggedToken::new(surface, category)
}

fn other(surface: &str) -> TaggedToken {
    tok(surface, TokenCategory::Other)
}

/// Render the four-sentence long description: a scene sentence, an action
/// sentence, and two filler detail sentences carrying the adjectives.
fn long_description(scene: &Scene, lex: &Lexicons) -> Description {
    let noun = |i: usize| lex.words(TokenCategory::Noun)[i].as_str();
    let obj = noun(scene.object);
    let bg = noun(OBJECT_NOUN_COUNT + scene.background);
    let verb = lex.words(TokenCategory::Verb)[scene.verb].as_str();
    let color = lex.words(TokenCategory::Color)[scene.color].as_str();
    let num = lex.words(TokenCategory::Numeral)[scene.numeral].as_str();
    let dir = lex.words(TokenCategory::Direction)[scene.direction].as_str();
    let adj_a = lex.words(TokenCategory::Adjective)[scene.adj_a].as_str();
    let adj_b = lex.words(TokenCategory::Adjective)[scene.adj_b].as_str();

    Description::from_sentences(vec![
        vec![
            other("the"),
            tok(num, TokenCategory::Numeral),
            tok(color, TokenCategory::Color),
            tok(obj, TokenCategory::Noun),
            tok(verb, TokenCategory::Verb),
            tok(dir, TokenCategory::Direction),
            other("near"),
            other("the"),
            tok(bg, TokenCategory::Noun),
        ],
        vec![
            other("the"),
            tok(color, TokenCategory::Color),
            tok(obj, TokenCategory::Noun),
            tok(verb, TokenCategory::Verb),
            tok(dir, TokenCategory::Direction),
            other("while"),
            other("the"),
            tok(bg, TokenCategory::Noun),
            other("stays"),
            other("busy"),
        ],
        vec![
            other("a"),
            tok(adj_a, TokenCategory::Adjective),
            other("view"),
            other("shows"),
            tok(num, TokenCategory::Numeral),
            tok(color, TokenCategory::Color),
            other("shapes"),
            other("moving"),
            tok(dir, TokenCategory::Direction),
        ],
        vec![
            other("the"),
            tok(adj_b, TokenCategory::Adjective),
            tok(bg, TokenCategory::Noun),
            other("rests"),
            tok(dir, TokenCategory::Direction),
            other("of"),
            other("the"),
            tok(obj, TokenCategory::Noun),
        ],
    ])
}

/// Render the short description: `<numeral> <color> <noun> <verb>`.
fn short_description(scene: &Scene, lex: &Lexicons) -> Description {
    let obj = lex.words(TokenCategory::Noun)[scene.object].as_str();
    let verb = lex.words(TokenCategory::Verb)[scene.verb].as_str();
    let color = lex.words(TokenCategory::Color)[scene.color].as_str();
    let num = lex.words(TokenCategory::Numeral)[scene.numeral].as_str();
    Description::from_sentences(vec![vec![
        tok(num, TokenCategory::Numeral),
        tok(color, TokenCategory::Color),
        tok(obj, TokenCategory::Noun),
        tok(verb, TokenCategory::Verb),
    ]])
}

/// Generate a corpus: each record draws a latent scene, renders frame
/// features as concatenated one-hot attribute blocks plus Gaussian noise,
/// and templates the paired descriptions. Deterministic given the seed.
pub fn gen_synthetic_corpus(config: &GenConfig, seed: u64) -> Result<Corpus> {
    if config.n_samples < 1 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    if config.n_frames < 1 {
        return Err(Error::InvalidArgument("n_frames must be >= 1".into()));
    }
    if config.d_in < ATTR_BLOCK * ATTR_SLOTS {
        return Err(Error::InvalidArgument(format!(
            "d_in too small to hold attribute blocks: need >= {}, got {}",
            ATTR_BLOCK * ATTR_SLOTS,
            config.d_in
        )));
    }
    if !(config.noise_std.is_finite() && config.noise_std >= 0.0) {
        return Err(Error::InvalidArgument(
            "noise_std must be finite and non-negative".into(),
        ));
    }

    let lex = Lexicons::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(config.n_samples);
    for idx in 0..config.n_samples {
        let scene = Scene::draw(&mut rng, &lex);
        let mut base = vec![0.0f64; config.d_in];
        for (slot, block_idx) in scene.block_indices().into_iter().enumerate() {
            base[slot * ATTR_BLOCK + block_idx] = 1.0;
        }
        let mut frames = Vec::with_capacity(config.n_frames);
        for _ in 0..config.n_frames {
            let frame: Vec<f32> = base
                .iter()
                .map(|&b| {
                    let z: f64 = rng.sample(StandardNormal);
                    (b + config.noise_std * z) as f32
                })
                .collect();
            frames.push(frame);
        }
        records.push(SampleRecord {
            id: format!("r{idx:06}"),
            frames,
            long: long_description(&scene, &lex),
            short: short_description(&scene, &lex),
        });
    }

    let corpus = Corpus {
        records,
        d_in: config.d_in,
        meta: CorpusMeta {
            seed: Some(seed),
            config_echo: Some(format!(
                "n_samples = {}\nn_frames = {}\nd_in = {}\nnoise_std = {}",
                config.n_samples, config.n_frames, config.d_in, config.noise_std
            )),
            source: "synthetic".into(),
        },
    };
    corpus.validate()?;
    Ok(corpus)
}
