//! Core algorithms for template-driven behavioral testing of binary text
//! classifiers.
//!
//! Everything here is pure and allocation-only: the crate is `no_std` with
//! `alloc`, and all IO (files, HTTP, clocks) lives in the `syntheval`
//! companion crate. The modules follow the three stages of the workflow:
//!
//! * generation: [`query`] samples seeding prefixes, [`segment`] cuts the
//!   model continuation down to one sentence;
//! * mining: [`prompt`] and [`scoring`] turn option scores into label
//!   distributions, [`divergence`] ranks disagreement between two models,
//!   [`ngram`] groups the hard examples by shared phrases;
//! * verification: [`template`] and [`lexicon`] expand templates into
//!   labeled cases, [`perturb`] builds typo and noise lexicons, [`verify`]
//!   aggregates per-case predictions into accuracies.
//!
//! [`mock`] holds the deterministic classifier and completion rules used
//! by the local mock servers, and [`protocol`] the backend wire types.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod divergence;
pub mod lexicon;
pub mod mock;
pub mod ngram;
pub mod perturb;
pub mod prompt;
pub mod protocol;
pub mod query;
pub mod scoring;
pub mod segment;
pub mod template;
pub mod verify;

mod text;

pub use divergence::{divergence_score, rank_hard_subset, DivergenceError, DivergenceRecord};
pub use lexicon::{validate_lexicon, Lexicon, LexiconError, LexiconSet};
pub use ngram::{cluster_by_ngram, ngram_counts, NgramStat};
pub use prompt::{build_fewshot_prompt, PromptStyle, TaskSpec};
pub use query::{sample_queries, Query, SamplingStrategy};
pub use scoring::{normalize_option_scores, Prediction};
pub use segment::{extract_first_sentence, RuleSegmenter, SentenceSegmenter};
pub use template::{expand, expansion_count, parse_pattern, ExpandedCase, Segment, Template};
pub use verify::{per_slot_accuracy, CaseResult, SlotAccuracy, TemplateResult};
