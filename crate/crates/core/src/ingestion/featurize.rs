//! Signed feature hashing of word and character n-grams.
//!
//! Each n-gram string is hashed with 64-bit FNV-1a (offset basis XOR
//! `hash_seed`). The bucket is `hash % dim` and the sign is `-1` when bit 63
//! is set. Rows are L2-normalized afterwards.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingMatrix};
use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Inclusive n-gram length range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramRange {
    pub min: usize,
    pub max: usize,
}

impl NgramRange {
    pub const fn new(min: usize, max: usize) -> Self {
        NgramRange { min, max }
    }

    fn is_valid(&self) -> bool {
        self.min >= 1 && self.min <= self.max
    }
}

impl std::str::FromStr for NgramRange {
    type Err = String;

    /// Accepts `"n"` or `"lo-hi"`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
        let range = match s.split_once('-') {
            Some((lo, hi)) => NgramRange::new(parse(lo)?, parse(hi)?),
            None => {
                let n = parse(s)?;
                NgramRange::new(n, n)
            }
        };
        if !range.is_valid() {
            return Err(format!("invalid n-gram range {s:?}"));
        }
        Ok(range)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizerConfig {
    pub dim: usize,
    pub word_ngrams: Option<NgramRange>,
    pub char_ngrams: Option<NgramRange>,
    pub hash_seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            dim: 512,
            word_ngrams: Some(NgramRange::new(1, 2)),
            char_ngrams: Some(NgramRange::new(3, 5)),
            hash_seed: 0,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "featurizer dim must be at least 2, got {}",
                self.dim
            )));
        }
        if self.word_ngrams.is_none() && self.char_ngrams.is_none() {
            return Err(Error::InvalidConfig(
                "at least one of word_ngrams / char_ngrams must be enabled".into(),
            ));
        }
        for r in self.word_ngrams.iter().chain(self.char_ngrams.iter()) {
            if !r.is_valid() {
                return Err(Error::InvalidConfig(format!("invalid n-gram range {r:?}")));
            }
        }
        Ok(())
    }
}

pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashed, unnormalized feature counts for one text.
pub fn hash_text(text: &str, cfg: &FeaturizerConfig) -> Vec<f64> {
    let mut row = vec![0.0; cfg.dim];
    let lowered = text.to_lowercase();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    let mut add = |gram: &str| {
        let h = fnv1a64(cfg.hash_seed, gram.as_bytes());
        let bucket = (h % cfg.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        row[bucket] += sign;
    };
    if let Some(r) = cfg.word_ngrams {
        for n in r.min..=r.max {
            for window in tokens.windows(n) {
                add(&window.join(" "));
            }
        }
    }
    if let Some(r) = cfg.char_ngrams {
        let mut buf = String::new();
        for tok in &tokens {
            let chars: Vec<char> = std::iter::once('<')
                .chain(tok.chars())
                .chain(std::iter::once('>'))
                .collect();
            for n in r.min..=r.max {
                for window in chars.windows(n) {
                    buf.clear();
                    buf.extend(window);
                    add(&buf);
                }
            }
        }
    }
    row
}

/// Featurizes every example in dataset order.
pub fn featurize(dataset: &Dataset, cfg: &FeaturizerConfig) -> Result<EmbeddingMatrix> {
    featurize_texts(dataset.examples().iter().map(|e| e.text.as_str()), cfg)
}

pub fn featurize_texts<'a>(
    texts: impl Iterator<Item = &'a str>,
    cfg: &FeaturizerConfig,
) -> Result<EmbeddingMatrix> {
    cfg.validate()?;
    let texts: Vec<&str> = texts.collect();
    let rows: Vec<Vec<f64>> = texts.par_iter().map(|t| hash_text(t, cfg)).collect();
    EmbeddingMatrix::from_rows(cfg.dim, &rows)
}
