//! Wire types of the two-endpoint backend protocol.
//!
//! `POST {base_url}/v1/complete` takes a [`CompleteRequest`] and answers a
//! [`CompleteResponse`]; `POST {base_url}/v1/score_options` takes a
//! [`ScoreOptionsRequest`] and answers a [`ScoreOptionsResponse`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const COMPLETE_PATH: &str = "/v1/complete";
pub const SCORE_OPTIONS_PATH: &str = "/v1/score_options";

pub const DEFAULT_TOP_P: f64 = 1.0;
pub const DEFAULT_MAX_TOKENS: usize = 64;
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Completion,
    OptionScoring,
    Both,
}

impl BackendKind {
    pub fn completes(self) -> bool {
        matches!(self, Self::Completion | Self::Both)
    }

    pub fn scores(self) -> bool {
        matches!(self, Self::OptionScoring | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("top_p must be in (0, 1], got {0}")]
    TopP(f64),
    #[error("max_tokens must be at least 1")]
    MaxTokens,
    #[error("max_in_flight must be at least 1")]
    MaxInFlight,
    #[error("timeout_ms must be positive")]
    Timeout,
    #[error("options must be non-empty")]
    NoOptions,
    #[error("duplicate option {0:?}")]
    DuplicateOption(String),
    #[error("backend {model_id} does not support {capability}")]
    Unsupported { model_id: String, capability: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub model_id: String,
    pub base_url: String,
    pub kind: BackendKind,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_max_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl BackendDescriptor {
    pub fn new(model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            base_url: base_url.into(),
            kind: BackendKind::Both,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.max_in_flight == 0 {
            return Err(ProtocolError::MaxInFlight);
        }
        if self.timeout_ms == 0 {
            return Err(ProtocolError::Timeout);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    pub max_tokens: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_top_p() -> f64 {
    DEFAULT_TOP_P
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { top_p: DEFAULT_TOP_P, max_tokens: DEFAULT_MAX_TOKENS, seed: None }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ProtocolError::TopP(self.top_p));
        }
        if self.max_tokens == 0 {
            return Err(ProtocolError::MaxTokens);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompleteRequest {
    pub fn new(prompt: impl Into<String>, config: &GenerationConfig) -> Self {
        Self { prompt: prompt.into(), max_tokens: config.max_tokens, top_p: config.top_p, seed: config.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptionsRequest {
    pub prompt: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptionsResponse {
    pub logprobs: BTreeMap<String, f64>,
}

/// Options must be non-empty and pairwise distinct.
pub fn validate_options(options: &[String]) -> Result<(), ProtocolError> {
    if options.is_empty() {
        return Err(ProtocolError::NoOptions);
    }
    let mut seen = BTreeSet::new();
    for o in options {
        if !seen.insert(o) {
            return Err(ProtocolError::DuplicateOption(o.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn top_p_bounds() {
        let mut c = GenerationConfig::default();
        assert_eq!(c.top_p, 1.0);
        c.validate().unwrap();
        for bad in [0.0, -0.1, 1.0001, f64::NAN] {
            c.top_p = bad;
            assert!(c.validate().is_err(), "{bad}");
        }
        c.top_p = 0.5;
        c.max_tokens = 0;
        assert_eq!(c.validate(), Err(ProtocolError::MaxTokens));
    }

    #[test]
    fn options_validation() {
        assert_eq!(validate_options(&[]), Err(ProtocolError::NoOptions));
        assert_eq!(
            validate_options(&vec!["positive".into(), "positive".into()]),
            Err(ProtocolError::DuplicateOption("positive".into()))
        );
        validate_options(&vec!["positive".into(), "negative".into()]).unwrap();
    }

    #[test]
    fn descriptor_validation() {
        let mut d = BackendDescriptor::new("m", "http://x");
        d.validate().unwrap();
        d.max_in_flight = 0;
        assert_eq!(d.validate(), Err(ProtocolError::MaxInFlight));
        d.max_in_flight = 1;
        d.timeout_ms = 0;
        assert_eq!(d.validate(), Err(ProtocolError::Timeout));
    }
}
