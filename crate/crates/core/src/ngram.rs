//! Frequent n-grams over a set of texts, counted once per text.
//!
//! Tokens are produced by splitting on Unicode whitespace, lowercasing and
//! trimming punctuation from both ends of each token.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::text::{normalize_token, normalized_tokens};

pub const DEFAULT_N_MIN: usize = 2;
pub const DEFAULT_N_MAX: usize = 5;
pub const DEFAULT_MIN_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramStat {
    pub ngram: Vec<String>,
    pub n: usize,
    /// Number of texts containing the n-gram.
    pub count: usize,
    /// Ascending.
    pub example_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid n range {n_min}..={n_max}: need 1 <= n_min <= n_max")]
pub struct InvalidRange {
    pub n_min: usize,
    pub n_max: usize,
}

pub fn ngram_counts(
    texts: &BTreeMap<String, String>,
    n_min: usize,
    n_max: usize,
    min_count: usize,
) -> Result<Vec<NgramStat>, InvalidRange> {
    if n_min == 0 || n_min > n_max {
        return Err(InvalidRange { n_min, n_max });
    }
    let mut hits: BTreeMap<Vec<String>, Vec<&String>> = BTreeMap::new();
    for (id, text) in texts {
        let tokens = normalized_tokens(text);
        let mut distinct: BTreeSet<&[String]> = BTreeSet::new();
        for n in n_min..=n_max.min(tokens.len()) {
            distinct.extend(tokens.windows(n));
        }
        for gram in distinct {
            hits.entry(gram.to_vec()).or_default().push(id);
        }
    }
    let mut stats: Vec<NgramStat> = hits
        .into_iter()
        .filter(|(_, ids)| ids.len() >= min_count.max(1))
        .map(|(ngram, ids)| NgramStat {
            n: ngram.len(),
            count: ids.len(),
            // Ids arrive in map order, so they are already ascending.
            example_ids: ids.into_iter().cloned().collect(),
            ngram,
        })
        .collect();
    stats.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.ngram.cmp(&b.ngram)));
    Ok(stats)
}

/// Ids of texts containing `ngram` as a contiguous token run, ascending.
/// The query tokens are normalized the same way as the texts.
pub fn cluster_by_ngram(texts: &BTreeMap<String, String>, ngram: &[String]) -> Vec<String> {
    let needle: Vec<String> = ngram.iter().map(|t| normalize_token(t)).filter(|t| !t.is_empty()).collect();
    if needle.is_empty() {
        return Vec::new();
    }
    texts
        .iter()
        .filter(|(_, text)| normalized_tokens(text).windows(needle.len()).any(|w| w == needle.as_slice()))
        .map(|(id, _)| id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn texts(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn gram(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn shared_bigram_counted() {
        let t = texts(&[("1", "I was blown away"), ("2", "blown away by it")]);
        let stats = ngram_counts(&t, 2, 2, 1).unwrap();
        assert_eq!(stats[0].ngram, gram(&["blown", "away"]));
        assert_eq!(stats[0].count, 2);
        assert_eq!(stats[0].example_ids, ["1", "2"]);
        assert!(stats[1..].iter().all(|s| s.count == 1));
    }

    #[test]
    fn empty_input() {
        assert!(ngram_counts(&BTreeMap::new(), 2, 5, 1).unwrap().is_empty());
    }

    #[test]
    fn one_hit_per_text() {
        let t = texts(&[("a", "so so so so good"), ("b", "so so")]);
        let stats = ngram_counts(&t, 2, 2, 1).unwrap();
        let so_so = stats.iter().find(|s| s.ngram == gram(&["so", "so"])).unwrap();
        assert_eq!(so_so.count, 2);
    }

    #[test]
    fn normalizes_case_and_punctuation() {
        let t = texts(&[("a", "Blown AWAY!"), ("b", "\"blown away\""), ("c", "blown, away")]);
        let stats = ngram_counts(&t, 2, 2, 3).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].count, 3);
    }

    #[test]
    fn sorted_by_count_then_ngram() {
        let t = texts(&[("1", "a b c"), ("2", "a b c"), ("3", "x y a b")]);
        let stats = ngram_counts(&t, 2, 3, 1).unwrap();
        assert_eq!(stats[0].ngram, gram(&["a", "b"]));
        assert!(stats.windows(2).all(|w| w[0].count > w[1].count || (w[0].count == w[1].count && w[0].ngram < w[1].ngram)));
    }

    #[test]
    fn min_count_filters_and_bad_range_errors() {
        let t = texts(&[("1", "a b"), ("2", "c d")]);
        assert!(ngram_counts(&t, 2, 2, 2).unwrap().is_empty());
        assert!(ngram_counts(&t, 0, 2, 1).is_err());
        assert!(ngram_counts(&t, 3, 2, 1).is_err());
    }

    #[test]
    fn clusters() {
        let t = texts(&[("1", "I was blown away"), ("2", "blown away by it"), ("3", "away blown")]);
        assert_eq!(cluster_by_ngram(&t, &gram(&["blown", "away"])), ["1", "2"]);
        assert!(cluster_by_ngram(&t, &gram(&["not", "here"])).is_empty());
        assert!(cluster_by_ngram(&t, &[]).is_empty());
        assert_eq!(cluster_by_ngram(&t, &gram(&["Blown", "Away!"])), vec!["1", "2"]);
    }
}
