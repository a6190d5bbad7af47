//! Gazetteer-driven target tagging and train-set augmentation.
//!
//! Matching runs over whitespace-delimited tokens, compares the token with
//! leading/trailing punctuation stripped, and prefers the longest gazetteer
//! phrase at each position. Every match gets a `[TARGET] ` prefix.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::{Dataset, LabeledExample, Split};

pub const TARGET_MARKER: &str = "[TARGET]";
pub const TAGGED_ID_SUFFIX: &str = "#tagged";

const BUILTIN_GAZETTEER: &str = include_str!("../data/gazetteer.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntityCategory {
    #[serde(rename = "ORG")]
    Org,
    #[serde(rename = "NORP")]
    Norp,
    #[serde(rename = "GPE")]
    Gpe,
}

impl FromStr for EntityCategory {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ORG" => Ok(EntityCategory::Org),
            "NORP" => Ok(EntityCategory::Norp),
            "GPE" => Ok(EntityCategory::Gpe),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityCategory::Org => "ORG",
            EntityCategory::Norp => "NORP",
            EntityCategory::Gpe => "GPE",
        })
    }
}

/// Lowercase surface term (tokens joined by single spaces) to category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gazetteer {
    entries: HashMap<String, EntityCategory>,
    max_tokens: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    /// The starter list shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_GAZETTEER).expect("built-in gazetteer is well-formed")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses `term<TAB>category` lines. Lines starting with `#` and blank
    /// lines are ignored. Terms are lowercased and whitespace-normalized.
    pub fn parse(text: &str) -> Result<Self> {
        let mut g = Gazetteer::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: lineno,
                message,
            };
            let (term, cat) = line
                .split_once('\t')
                .ok_or_else(|| err("expected term<TAB>category".into()))?;
            let cat: EntityCategory = cat.trim().parse().map_err(err)?;
            g.insert(term, cat).map_err(|e| match e {
                Error::InvalidConfig(m) => err(m),
                other => other,
            })?;
        }
        Ok(g)
    }

    pub fn insert(&mut self, term: &str, category: EntityCategory) -> Result<()> {
        let normalized = term
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ");
        if normalized.is_empty() {
            return Err(Error::InvalidConfig("empty gazetteer term".into()));
        }
        if normalized == "[target]" {
            return Err(Error::InvalidConfig("the marker cannot be a gazetteer term".into()));
        }
        if let Some(prev) = self.entries.get(&normalized) {
            if *prev != category {
                return Err(Error::InvalidConfig(format!(
                    "term {normalized:?} listed as both {prev} and {category}"
                )));
            }
        }
        self.max_tokens = self.max_tokens.max(normalized.split(' ').count());
        self.entries.insert(normalized, category);
        Ok(())
    }

    pub fn get(&self, term: &str) -> Option<EntityCategory> {
        self.entries.get(term).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedExample {
    pub base: LabeledExample,
    pub tagged_text: String,
    /// Number of `[TARGET]` markers in `tagged_text`.
    pub hit_count: usize,
}

struct Token<'a> {
    start: usize,
    raw: &'a str,
    core: String,
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let base = text.as_ptr() as usize;
    text.split_whitespace()
        .map(|raw| Token {
            start: raw.as_ptr() as usize - base,
            raw,
            core: raw
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase(),
        })
        .collect()
}

/// Length in tokens of the longest gazetteer phrase starting at `i`.
fn longest_match(tokens: &[Token<'_>], i: usize, g: &Gazetteer) -> Option<usize> {
    let max = g.max_tokens.min(tokens.len() - i);
    let mut phrase = String::new();
    let mut best = None;
    for len in 1..=max {
        let tok = &tokens[i + len - 1];
        if tok.core.is_empty() || tok.raw == TARGET_MARKER {
            break;
        }
        if len > 1 {
            phrase.push(' ');
        }
        phrase.push_str(&tok.core);
        if g.entries.contains_key(&phrase) {
            best = Some(len);
        }
    }
    best
}

pub fn tag_targets(example: &LabeledExample, g: &Gazetteer) -> TaggedExample {
    let text = &example.text;
    let tokens = tokenize(text);
    let mut inserts = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i].raw == TARGET_MARKER {
            // an already-tagged span: skip the marker and whatever it covers
            i += 1;
            if i < tokens.len() {
                i += longest_match(&tokens, i, g).unwrap_or(0);
            }
            continue;
        }
        match longest_match(&tokens, i, g) {
            Some(len) => {
                inserts.push(tokens[i].start);
                i += len;
            }
            None => i += 1,
        }
    }
    let tagged_text = if inserts.is_empty() {
        text.clone()
    } else {
        let mut out = String::with_capacity(text.len() + inserts.len() * 9);
        let mut last = 0;
        for at in inserts {
            out.push_str(&text[last..at]);
            out.push_str(TARGET_MARKER);
            out.push(' ');
            last = at;
        }
        out.push_str(&text[last..]);
        out
    };
    let hit_count = tagged_text.matches(TARGET_MARKER).count();
    TaggedExample {
        base: example.clone(),
        tagged_text,
        hit_count,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AugmentStats {
    pub train: usize,
    pub hate_train: usize,
    pub tagged: usize,
}

impl AugmentStats {
    /// Fraction of hate-labeled train rows that received a tagged copy.
    pub fn coverage(&self) -> f64 {
        if self.hate_train == 0 {
            0.0
        } else {
            self.tagged as f64 / self.hate_train as f64
        }
    }
}

/// Appends a tagged copy of every hate-labeled train example that has at
/// least one marker. Originals keep their order; copies follow all originals
/// and carry the `#tagged` id suffix.
pub fn augment_train_set(d: &Dataset, g: &Gazetteer) -> Result<(Dataset, AugmentStats)> {
    let mut stats = AugmentStats::default();
    let mut examples = d.examples().to_vec();
    for ex in d.examples().iter().filter(|e| e.split == Split::Train) {
        stats.train += 1;
        if !ex.label.is_hate() {
            continue;
        }
        stats.hate_train += 1;
        let tagged = tag_targets(ex, g);
        if tagged.hit_count >= 1 {
            stats.tagged += 1;
            examples.push(LabeledExample {
                id: format!("{}{}", ex.id, TAGGED_ID_SUFFIX),
                text: tagged.tagged_text,
                label: ex.label,
                split: Split::Train,
            });
        }
    }
    Ok((Dataset::new(d.name.clone(), examples)?, stats))
}
