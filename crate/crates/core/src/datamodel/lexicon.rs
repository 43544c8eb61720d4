//! Built-in category word lists backing generation and perturbation.

use std::collections::HashMap;

use super::TokenCategory;
use crate::{Error, Result};

/// Object nouns occupy the first half of the noun list, background nouns
/// the second half; both carry the `noun` category everywhere.
pub const OBJECT_NOUN_COUNT: usize = 8;

const NOUNS: &[&str] = &[
    // objects
    "dog", "cat", "horse", "robot", "dancer", "truck", "kite", "drone",
    // backgrounds
    "park", "beach", "harbor", "meadow", "plaza", "forest", "stadium", "bridge",
];
const VERBS: &[&str] = &[
    "jump", "run", "spin", "glide", "march", "wander", "leap", "roll",
];
const COLORS: &[&str] = &[
    "red", "blue", "green", "yellow", "purple", "black", "white", "silver",
];
const NUMERALS: &[&str] = &[
    "two", "three", "four", "five", "six", "seven", "eight", "nine",
];
const DIRECTIONS: &[&str] = &["north", "south", "east", "west", "leftward", "rightward"];
const ADJECTIVES: &[&str] = &[
    "quiet", "bright", "dusty", "smooth", "crowded", "ancient", "shiny", "gentle",
];

/// Per-category word lists, pairwise disjoint, each large enough that a
/// replacement can always pick a different word.
#[derive(Debug, Clone)]
pub struct Lexicons {
    nouns: Vec<String>,
    verbs: Vec<String>,
    colors: Vec<String>,
    numerals: Vec<String>,
    directions: Vec<String>,
    adjectives: Vec<String>,
    category_of: HashMap<String, TokenCategory>,
}

impl Lexicons {
    /// The built-in lists.
    pub fn builtin() -> Self {
        Self::from_lists(
            NOUNS.iter().map(|s| s.to_string()).collect(),
            VERBS.iter().map(|s| s.to_string()).collect(),
            COLORS.iter().map(|s| s.to_string()).collect(),
            NUMERALS.iter().map(|s| s.to_string()).collect(),
            DIRECTIONS.iter().map(|s| s.to_string()).collect(),
            ADJECTIVES.iter().map(|s| s.to_string()).collect(),
        )
        .expect("builtin lexicons are valid")
    }

    /// Validating constructor: every list needs at least 4 entries and the
    /// lists must be disjoint.
    pub fn from_lists(
        nouns: Vec<String>,
        verbs: Vec<String>,
        colors: Vec<String>,
        numerals: Vec<String>,
        directions: Vec<String>,
        adjectives: Vec<String>,
    ) -> Result<Self> {
        let lists: [(&str, &[String], TokenCategory); 6] = [
            ("nouns", &nouns, TokenCategory::Noun),
            ("verbs", &verbs, TokenCategory::Verb),
            ("colors", &colors, TokenCategory::Color),
            ("numerals", &numerals, TokenCategory::Numeral),
            ("directions", &directions, TokenCategory::Direction),
            ("adjectives", &adjectives, TokenCategory::Adjective),
        ];
        let mut category_of = HashMap::new();
        for (name, list, cat) in lists {
            if list.len() < 4 {
                return Err(Error::Validation(format!(
                    "lexicon {name} needs at least 4 entries, has {}",
                    list.len()
                )));
            }
            for w in list {
                if category_of.insert(w.clone(), cat).is_some() {
                    return Err(Error::Validation(format!(
                        "lexicon word {w:?} appears in more than one list"
                    )));
                }
            }
        }
        Ok(Self {
            nouns,
            verbs,
            colors,
            numerals,
            directions,
            adjectives,
            category_of,
        })
    }

    pub fn words(&self, cat: TokenCategory) -> &[String] {
        match cat {
            TokenCategory::Noun => &self.nouns,
            TokenCategory::Verb => &self.verbs,
            TokenCategory::Color => &self.colors,
            TokenCategory::Numeral => &self.numerals,
            TokenCategory::Direction => &self.directions,
            TokenCategory::Adjective => &self.adjectives,
            TokenCategory::Other => &[],
        }
    }

    /// Category of a word, if it is in any list.
    pub fn category(&self, word: &str) -> Option<TokenCategory> {
        self.category_of.get(word).copied()
    }

    pub fn contains(&self, word: &str, cat: TokenCategory) -> bool {
        self.category(word) == Some(cat)
    }
}
