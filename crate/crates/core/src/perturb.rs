//! Typo and nonsense-character perturbations.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TYPO_VARIANTS: usize = 50;
pub const NONSENSE_MIN_LEN: usize = 60;
pub const NONSENSE_MAX_LEN: usize = 70;

/// Printable ASCII 0x21..=0x7E without letters: digits and symbols.
pub const NONSENSE_POOL: &[u8] = b"!\"#$%&'()*+,-./0123456789:;<=>?@[\\]^_`{|}~";

const INSERT_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PerturbError {
    #[error("term {0:?} is too short for typos (need at least 2 characters)")]
    TermTooShort(String),
    #[error("requested {requested} typo variants but only {achievable} distinct variants exist")]
    NotEnoughVariants { requested: usize, achievable: usize },
    #[error("n_variants must be at least 1")]
    ZeroVariants,
    #[error("invalid length bounds {min_len}..={max_len}")]
    InvalidBounds { min_len: usize, max_len: usize },
}

/// A single-character edit. Indices are char positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TypoEdit {
    Delete { index: usize },
    Insert { index: usize, ch: char },
    /// Swaps the characters at `index` and `index + 1`.
    Transpose { index: usize },
}

impl TypoEdit {
    /// `None` when the index is out of range for `term`.
    pub fn apply(self, term: &str) -> Option<String> {
        let mut chars: Vec<char> = term.chars().collect();
        match self {
            TypoEdit::Delete { index } if index < chars.len() => {
                chars.remove(index);
            }
            TypoEdit::Insert { index, ch } if index <= chars.len() => chars.insert(index, ch),
            TypoEdit::Transpose { index } if index + 1 < chars.len() => chars.swap(index, index + 1),
            _ => return None,
        }
        Some(chars.into_iter().collect())
    }
}

/// Every edit applicable to a term of `len` characters.
fn all_edits(len: usize) -> impl Iterator<Item = TypoEdit> {
    let deletes = (0..len).map(|index| TypoEdit::Delete { index });
    let inserts = (0..=len)
        .flat_map(|index| INSERT_ALPHABET.iter().map(move |&b| TypoEdit::Insert { index, ch: char::from(b) }));
    let swaps = (0..len.saturating_sub(1)).map(|index| TypoEdit::Transpose { index });
    deletes.chain(inserts).chain(swaps)
}

/// Distinct strings reachable by one edit, excluding the term itself.
pub fn distinct_variants(term: &str) -> BTreeSet<String> {
    let len = term.chars().count();
    all_edits(len).filter_map(|e| e.apply(term)).filter(|v| v != term).collect()
}

fn random_edit(rng: &mut ChaCha8Rng, len: usize) -> TypoEdit {
    // Operation first, then position (and letter for insertions), so the
    // three kinds of typo are equally likely.
    match rng.random_range(0..3u8) {
        0 => TypoEdit::Delete { index: rng.random_range(0..len) },
        1 => TypoEdit::Insert {
            index: rng.random_range(0..=len),
            ch: char::from(INSERT_ALPHABET[rng.random_range(0..INSERT_ALPHABET.len())]),
        },
        _ => TypoEdit::Transpose { index: rng.random_range(0..len - 1) },
    }
}

/// `n_variants` distinct one-edit typos of `term`, none equal to it.
pub fn typo_variants(term: &str, n_variants: usize, seed: u64) -> Result<Vec<String>, PerturbError> {
    let len = term.chars().count();
    if len < 2 {
        return Err(PerturbError::TermTooShort(term.into()));
    }
    if n_variants == 0 {
        return Err(PerturbError::ZeroVariants);
    }
    let space = distinct_variants(term);
    if space.len() < n_variants {
        return Err(PerturbError::NotEnoughVariants { requested: n_variants, achievable: space.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n_variants);
    let mut misses = 0usize;
    let miss_budget = 64 * space.len();
    while out.len() < n_variants {
        let Some(candidate) = random_edit(&mut rng, len).apply(term) else { continue };
        if candidate != term && seen.insert(candidate.clone()) {
            out.push(candidate);
        } else {
            misses += 1;
            if misses > miss_budget {
                // Nearly exhausted space: draw the rest from what is left.
                let mut rest: Vec<String> = space.difference(&seen).cloned().collect();
                rest.shuffle(&mut rng);
                out.extend(rest.into_iter().take(n_variants - out.len()));
            }
        }
    }
    Ok(out)
}

/// Random string of digits and ASCII symbols, no letters and no spaces,
/// with length uniform in `min_len..=max_len`.
pub fn nonsense_string(min_len: usize, max_len: usize, seed: u64) -> Result<String, PerturbError> {
    if min_len == 0 || min_len > max_len {
        return Err(PerturbError::InvalidBounds { min_len, max_len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(min_len..=max_len);
    Ok((0..len).map(|_| char::from(NONSENSE_POOL[rng.random_range(0..NONSENSE_POOL.len())])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffixPosition {
    Prefix,
    Suffix,
}

/// Concatenation with no separator.
pub fn apply_affix(sentence: &str, affix: &str, position: AffixPosition) -> String {
    let mut out = String::with_capacity(sentence.len() + affix.len());
    match position {
        AffixPosition::Prefix => {
            out.push_str(affix);
            out.push_str(sentence);
        }
        AffixPosition::Suffix => {
            out.push_str(sentence);
            out.push_str(affix);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSpec {
    Typo { term: String, n_variants: usize, seed: u64 },
    NonsenseAffix { count: usize, min_len: usize, max_len: usize, position: AffixPosition, seed: u64 },
}

impl PerturbationSpec {
    /// Produces the lexicon entries for this perturbation. Nonsense strings
    /// are drawn with per-entry seeds `seed, seed + 1, ...`; repeated
    /// strings and strings starting with `#` (a comment in lexicon files)
    /// are skipped.
    pub fn entries(&self) -> Result<Vec<String>, PerturbError> {
        match self {
            PerturbationSpec::Typo { term, n_variants, seed } => typo_variants(term, *n_variants, *seed),
            PerturbationSpec::NonsenseAffix { count, min_len, max_len, seed, .. } => {
                if *count == 0 {
                    return Err(PerturbError::ZeroVariants);
                }
                let mut seen = BTreeSet::new();
                let mut out = Vec::with_capacity(*count);
                let mut s = *seed;
                while out.len() < *count {
                    let candidate = nonsense_string(*min_len, *max_len, s)?;
                    s = s.wrapping_add(1);
                    if !candidate.starts_with('#') && seen.insert(candidate.clone()) {
                        out.push(candidate);
                    }
                }
                Ok(out)
            }
        }
    }
}
