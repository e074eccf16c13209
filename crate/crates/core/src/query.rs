//! Seeding queries sampled from an existing corpus.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_QUERY_WORDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub words: Vec<String>,
    /// 1-based line number in the corpus.
    pub source_line: usize,
}

impl Query {
    /// Words joined by single spaces; this is the continuation prompt.
    pub fn prompt(&self) -> String {
        self.words.join(" ")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    /// The first k tokens of the sentence.
    #[default]
    FirstK,
    /// k tokens at random positions of the sentence, kept in order.
    RandomK,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no corpus sentence has at least {0} tokens")]
    NoEligibleSentence(usize),
    #[error("k_words must be at least 1")]
    ZeroWords,
}

/// Samples `n_queries` sentences uniformly without replacement (with
/// replacement when fewer eligible sentences exist) and takes `k_words`
/// tokens from each. Sentences shorter than `k_words` tokens are never
/// drawn.
pub fn sample_queries<S: AsRef<str>>(
    corpus: &[S],
    k_words: usize,
    n_queries: usize,
    seed: u64,
    strategy: SamplingStrategy,
) -> Result<Vec<Query>, SampleError> {
    if k_words == 0 {
        return Err(SampleError::ZeroWords);
    }
    if corpus.is_empty() {
        return Err(SampleError::EmptyCorpus);
    }
    let eligible: Vec<(usize, Vec<&str>)> = corpus
        .iter()
        .enumerate()
        .map(|(i, line)| (i, line.as_ref().split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, tokens)| tokens.len() >= k_words)
        .collect();
    if eligible.is_empty() {
        return Err(SampleError::NoEligibleSentence(k_words));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if n_queries <= eligible.len() {
        rand::seq::index::sample(&mut rng, eligible.len(), n_queries).into_vec()
    } else {
        (0..n_queries).map(|_| rng.random_range(0..eligible.len())).collect()
    };
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(n, pick)| {
            let (line_idx, tokens) = &eligible[pick];
            let words = match strategy {
                SamplingStrategy::FirstK => tokens[..k_words].iter().map(|t| String::from(*t)).collect(),
                SamplingStrategy::RandomK => {
                    let mut positions = rand::seq::index::sample(&mut rng, tokens.len(), k_words).into_vec();
                    positions.sort_unstable();
                    positions.into_iter().map(|p| String::from(tokens[p])).collect()
                }
            };
            Query { id: format!("q{n:06}"), words, source_line: line_idx + 1 }
        })
        .collect())
}
