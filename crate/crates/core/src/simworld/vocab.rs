//! Closed vocabularies for the simulated world.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Concept categories. Only the first five are stored as object attributes;
/// number is expressed by repeated objects and spatial by relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptKey {
    Size,
    Shape,
    Color,
    Texture,
    Style,
    Number,
    Spatial,
}

impl ConceptKey {
    pub const ATTRIBUTES: [ConceptKey; 5] = [
        ConceptKey::Size,
        ConceptKey::Shape,
        ConceptKey::Color,
        ConceptKey::Texture,
        ConceptKey::Style,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConceptKey::Size => "size",
            ConceptKey::Shape => "shape",
            ConceptKey::Color => "color",
            ConceptKey::Texture => "texture",
            ConceptKey::Style => "style",
            ConceptKey::Number => "number",
            ConceptKey::Spatial => "spatial",
        }
    }

    pub fn is_attribute(self) -> bool {
        !matches!(self, ConceptKey::Number | ConceptKey::Spatial)
    }

    /// Known values for an attribute key. Value sets are disjoint.
    pub fn values(self) -> &'static [&'static str] {
        match self {
            ConceptKey::Size => &["tiny", "small", "large", "huge"],
            ConceptKey::Shape => &["round", "square", "triangular", "oval", "rectangular"],
            ConceptKey::Color => &[
                "red", "green", "blue", "pink", "yellow", "white", "black", "purple", "brown", "gray", "khaki",
            ],
            ConceptKey::Texture => &["metallic", "wooden", "furry", "plastic", "fluffy"],
            ConceptKey::Style => &["cartoon", "realistic", "watercolor", "pixelated", "sketched"],
            ConceptKey::Number | ConceptKey::Spatial => &[],
        }
    }

    /// Texture and style read naturally only as "with <value> <key>" phrases.
    pub(crate) fn renders_inline(self) -> bool {
        matches!(self, ConceptKey::Size | ConceptKey::Shape | ConceptKey::Color)
    }
}

impl fmt::Display for ConceptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConceptKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "size" => ConceptKey::Size,
            "shape" => ConceptKey::Shape,
            "color" | "colour" => ConceptKey::Color,
            "texture" => ConceptKey::Texture,
            "style" => ConceptKey::Style,
            "number" => ConceptKey::Number,
            "spatial" => ConceptKey::Spatial,
            other => return Err(format!("unknown concept key {other:?}")),
        })
    }
}

/// Attribute key for a known value word, if any.
pub fn key_of_value(word: &str) -> Option<ConceptKey> {
    ConceptKey::ATTRIBUTES
        .into_iter()
        .find(|k| k.values().contains(&word))
}

/// Relation predicates as `(canonical, inverse)`. Scenes store only the
/// canonical form; `a under b` is stored as `b on top of a`.
pub const PREDICATES: [(&str, &str); 7] = [
    ("on top of", "under"),
    ("next to", "next to"),
    ("surrounded by", "surrounding"),
    ("to the left of", "to the right of"),
    ("behind", "in front of"),
    ("wearing", "worn by"),
    ("holding", "held by"),
];

pub fn is_symmetric(canonical: &str) -> bool {
    PREDICATES.iter().any(|(c, i)| *c == canonical && c == i)
}

/// Maps any predicate phrase to `(canonical, swapped)`, where `swapped` says
/// the endpoints must be exchanged.
pub fn canonical_predicate(phrase: &str) -> Option<(&'static str, bool)> {
    for (c, i) in PREDICATES {
        if phrase == c {
            return Some((c, false));
        }
        if phrase == i {
            return Some((c, true));
        }
    }
    None
}

pub fn inverse_predicate(canonical: &str) -> Option<&'static str> {
    PREDICATES.iter().find(|(c, _)| *c == canonical).map(|(_, i)| *i)
}

pub fn canonical_predicates() -> impl Iterator<Item = &'static str> {
    PREDICATES.iter().map(|(c, _)| *c)
}

/// Every predicate phrase, split into words, longest first so the
/// tokenizer can match greedily.
pub(crate) fn predicate_phrases() -> Vec<Vec<&'static str>> {
    let mut out: Vec<Vec<&'static str>> = PREDICATES
        .iter()
        .flat_map(|(c, i)| [*c, *i])
        .map(|p| p.split(' ').collect())
        .collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    out.dedup();
    out
}

const COUNT_WORDS: [&str; 9] = ["two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];

pub fn count_word(n: u32) -> Option<&'static str> {
    (2..=10).contains(&n).then(|| COUNT_WORDS[(n - 2) as usize])
}

pub fn parse_count_word(word: &str) -> Option<u32> {
    COUNT_WORDS.iter().position(|w| *w == word).map(|i| i as u32 + 2)
}

/// Nouns used by the random scene generator. None ends in "s", so plurals
/// round-trip through [`pluralize`] and [`singularize`].
pub const NOUNS: [&str; 24] = [
    "apple", "bench", "car", "bowl", "dog", "cat", "duck", "corgi", "cactus", "fork", "plate", "table", "chair",
    "lamp", "book", "cup", "vase", "bird", "horse", "clock", "shirt", "boy", "box", "kite",
];

pub fn pluralize(noun: &str) -> String {
    let sibilant = ["s", "x", "z", "ch", "sh"].iter().any(|e| noun.ends_with(e));
    if sibilant {
        format!("{noun}es")
    } else if noun.len() > 1
        && noun.ends_with('y')
        && !matches!(noun.as_bytes()[noun.len() - 2], b'a' | b'e' | b'i' | b'o' | b'u')
    {
        format!("{}ies", &noun[..noun.len() - 1])
    } else {
        format!("{noun}s")
    }
}

pub fn singularize(word: &str) -> String {
    if let Some(stem) = word.strip_suffix("ies") {
        return format!("{stem}y");
    }
    if let Some(stem) = word.strip_suffix("es") {
        if ["ss", "us", "x", "z", "ch", "sh"].iter().any(|e| stem.ends_with(e)) {
            return stem.to_owned();
        }
    }
    word.strip_suffix('s').unwrap_or(word).to_owned()
}

pub(crate) fn article_for(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}
