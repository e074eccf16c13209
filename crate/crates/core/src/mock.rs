//! Deterministic model rules behind the local mock servers.
//!
//! The classifier counts polarity terms and can optionally flip a term
//! preceded by a negation marker. A negation-blind and a negation-aware
//! instance disagree exactly on negated sentences, which is the planted
//! divergence the ranking stage should surface. The completion rule
//! produces neutral word salad keyed on the prompt.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::prompt::SENTIMENT_QUESTION;
use crate::text::{fnv1a64, normalize_token};

pub const DEFAULT_NEGATION_MARKERS: &[&str] = &["not", "n't", "never", "don't", "isn't"];

/// Log-odds of positive over negative per unit of net evidence.
pub const LOG_ODDS_PER_HIT: f64 = 2.0;

/// A marker negates a term at most this many tokens after it.
pub const NEGATION_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconClassifierRule {
    positive_terms: BTreeSet<String>,
    negative_terms: BTreeSet<String>,
    pub negation_aware: bool,
    negation_markers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("terms are both positive and negative: {0:?}")]
pub struct OverlappingTerms(pub Vec<String>);

fn normalize_term(t: &str) -> String {
    normalize_token(&t.replace('\u{2019}', "'"))
}

impl LexiconClassifierRule {
    /// Terms are normalized like text tokens (lowercase, outer punctuation
    /// trimmed). Terms are single tokens; entries containing whitespace
    /// can never match.
    pub fn new<P, N>(positive: P, negative: N, negation_aware: bool) -> Result<Self, OverlappingTerms>
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        N: IntoIterator,
        N::Item: AsRef<str>,
    {
        let positive_terms: BTreeSet<String> = positive.into_iter().map(|t| normalize_term(t.as_ref())).collect();
        let negative_terms: BTreeSet<String> = negative.into_iter().map(|t| normalize_term(t.as_ref())).collect();
        let overlap: Vec<String> = positive_terms.intersection(&negative_terms).cloned().collect();
        if !overlap.is_empty() {
            return Err(OverlappingTerms(overlap));
        }
        Ok(Self {
            positive_terms,
            negative_terms,
            negation_aware,
            negation_markers: DEFAULT_NEGATION_MARKERS.iter().map(|m| m.to_string()).collect(),
        })
    }

    pub fn with_negation_markers<I: IntoIterator<Item = String>>(mut self, markers: I) -> Self {
        self.negation_markers = markers.into_iter().map(|m| normalize_term(&m)).collect();
        self
    }

    pub fn negation_markers(&self) -> &[String] {
        &self.negation_markers
    }

    fn is_marker(&self, token: &str) -> bool {
        self.negation_markers
            .iter()
            .any(|m| token == m || (m.starts_with("n'") && token.ends_with(m.as_str())))
    }

    fn polarity(&self, token: &str) -> i64 {
        if self.positive_terms.contains(token) {
            1
        } else if self.negative_terms.contains(token) {
            -1
        } else {
            0
        }
    }

    /// Net evidence: +1 per positive hit, -1 per negative hit, with negated
    /// hits flipped when the rule is negation aware.
    pub fn net_evidence(&self, text: &str) -> i64 {
        let tokens: Vec<String> = text.split_whitespace().map(normalize_term).filter(|t| !t.is_empty()).collect();
        let mut base = 0;
        for (j, token) in tokens.iter().enumerate() {
            let p = self.polarity(token);
            if p == 0 {
                continue;
            }
            let negated = self.negation_aware
                && tokens[j.saturating_sub(NEGATION_WINDOW)..j].iter().any(|t| self.is_marker(t));
            base += if negated { -p } else { p };
        }
        base
    }
}

/// Log-scores for the two polarities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarityScores {
    pub positive: f64,
    pub negative: f64,
}

pub fn lexicon_classify(rule: &LexiconClassifierRule, text: &str) -> PolarityScores {
    let half = LOG_ODDS_PER_HIT / 2.0 * rule.net_evidence(text) as f64;
    PolarityScores { positive: half, negative: -half }
}

/// Pulls the text under classification out of a few-shot prompt built by
/// [`crate::prompt::build_fewshot_prompt`]; any other prompt is returned
/// whole.
pub fn extract_target_text(prompt: &str) -> &str {
    let body = prompt.strip_suffix("\n\nAnswer:").unwrap_or(prompt);
    let sentiment_marker = alloc::format!("{SENTIMENT_QUESTION} ");
    if body.len() != prompt.len() {
        if let Some(pos) = body.rfind(sentiment_marker.as_str()) {
            return &body[pos + sentiment_marker.len()..];
        }
        if let Some(pos) = body.rfind("\nText: \"").map(|p| p + 1).or_else(|| body.starts_with("Text: \"").then_some(0)) {
            let quoted = &body[pos + "Text: \"".len()..];
            return quoted.strip_suffix('"').unwrap_or(quoted);
        }
    }
    prompt
}

/// Classifier plus the answer strings that stand for each polarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockClassifier {
    pub rule: LexiconClassifierRule,
    pub positive_option: String,
    pub negative_option: String,
}

impl MockClassifier {
    pub fn new(rule: LexiconClassifierRule) -> Self {
        Self { rule, positive_option: "positive".into(), negative_option: "negative".into() }
    }

    /// Scores each option; options that are neither polarity score 0.
    pub fn score_options(&self, prompt: &str, options: &[String]) -> BTreeMap<String, f64> {
        let scores = lexicon_classify(&self.rule, extract_target_text(prompt));
        options
            .iter()
            .map(|o| {
                let s = if *o == self.positive_option {
                    scores.positive
                } else if *o == self.negative_option {
                    scores.negative
                } else {
                    0.0
                };
                (o.clone(), s)
            })
            .collect()
    }
}

/// Neutral vocabulary for mock continuations: no polarity terms and no
/// negation markers.
pub const COMPLETION_VOCABULARY: &[&str] = &[
    "the", "a", "story", "scene", "camera", "city", "night", "river", "train", "house", "window", "music",
    "people", "family", "road", "morning", "light", "street", "room", "table", "letter", "garden", "winter",
    "summer", "actor", "director", "screen", "audience", "then", "and", "with", "into", "around", "after",
    "before", "through", "while", "later", "again", "slowly", "quietly", "suddenly", "along", "under", "over",
    "near", "across", "walked", "turned", "looked", "waited", "opened", "closed", "returned", "spoke",
    "listened", "watched", "followed", "carried", "crossed", "remembered", "arrived", "left", "stayed",
    "began", "ended", "old", "new", "small", "large", "distant", "quiet", "empty", "crowded", "early", "late",
    "blue", "green", "grey", "red",
];

fn completion_rng(seed: u64, prompt: &str) -> ChaCha8Rng {
    let mut key = Vec::with_capacity(8 + prompt.len());
    key.extend_from_slice(&seed.to_le_bytes());
    key.extend_from_slice(prompt.as_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a64(&key))
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Word-salad continuation with between 1 and `max_tokens` words, starting
/// with a space. Sentence breaks are inserted at random after the third
/// word. Identical `(seed, prompt, max_tokens)` always give identical text.
pub fn seeded_completion(seed: u64, prompt: &str, max_tokens: usize) -> String {
    if max_tokens == 0 {
        return String::new();
    }
    let mut rng = completion_rng(seed, prompt);
    let n = rng.random_range(1..=max_tokens);
    let mut out = String::new();
    let mut capital = false;
    for i in 0..n {
        let word = COMPLETION_VOCABULARY[rng.random_range(0..COMPLETION_VOCABULARY.len())];
        out.push(' ');
        if capital {
            out.push_str(&capitalize(word));
        } else {
            out.push_str(word);
        }
        capital = i >= 2 && i + 1 < n && rng.random_range(0..6u8) == 0;
        if capital || i + 1 == n {
            out.push('.');
        }
    }
    out
}
