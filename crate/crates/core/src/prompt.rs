//! Few-shot prompts for the reference model.
//!
//! Two built-in formats are supported. The sentiment format repeats its
//! instruction inside every `Question:` line; the toxicity format states
//! the instruction once and quotes each text after `Text:`. Blocks are
//! separated by one blank line and the prompt ends with an empty
//! `Answer:` cue, without a trailing space or newline.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Version tag of the built-in prompt formats. Bump on any byte change.
pub const PROMPT_FORMAT_VERSION: &str = "fewshot-v1";

pub const SENTIMENT_QUESTION: &str = "Find the sentiment of this text. Answer with positive or negative:";
pub const TOXICITY_INSTRUCTION: &str = "Determine if the following text includes hate speech or offensive language. \
Respond with 'Yes' if it contains such language, or 'No' if it is free from hate speech and offensive language.";

const SENTIMENT_LABELS: [&str; 2] = ["positive", "negative"];
const TOXICITY_LABELS: [&str; 2] = ["toxic", "non-toxic"];

/// Label set of a built-in task, in canonical order.
pub fn builtin_label_set(task: &str) -> Option<[&'static str; 2]> {
    match task {
        "sentiment" => Some(SENTIMENT_LABELS),
        "toxicity" => Some(TOXICITY_LABELS),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "style", content = "template", rename_all = "snake_case")]
pub enum PromptStyle {
    Sentiment,
    Toxicity,
    /// `{text}` is replaced by the target text; exemplars are ignored.
    Custom(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub label_set: [String; 2],
    /// Answer string scored for each label.
    pub option_strings: BTreeMap<String, String>,
    pub fewshot_exemplars: Vec<Exemplar>,
    pub prompt_style: PromptStyle,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskSpecError {
    #[error("label set must have two distinct labels")]
    DuplicateLabel,
    #[error("label {0:?} has no option string")]
    MissingOption(String),
    #[error("option strings must be distinct")]
    DuplicateOption,
    #[error("exemplar label {0:?} is not in the label set")]
    UnknownExemplarLabel(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
}

fn exemplar(text: &str, label: &str) -> Exemplar {
    Exemplar { text: text.into(), label: label.into() }
}

impl TaskSpec {
    pub fn sentiment() -> Self {
        TaskSpec {
            task_id: "sentiment".into(),
            label_set: SENTIMENT_LABELS.map(String::from),
            option_strings: SENTIMENT_LABELS.iter().map(|l| (l.to_string(), l.to_string())).collect(),
            fewshot_exemplars: alloc::vec![
                exemplar("that is far too tragic to merit such superficial treatment", "negative"),
                exemplar("a smile on your face", "positive"),
                exemplar("saw how bad this movie was", "negative"),
                exemplar("the greatest musicians", "positive"),
            ],
            prompt_style: PromptStyle::Sentiment,
        }
    }

    pub fn toxicity() -> Self {
        TaskSpec {
            task_id: "toxicity".into(),
            label_set: TOXICITY_LABELS.map(String::from),
            option_strings: [("toxic".to_string(), "Yes".to_string()), ("non-toxic".to_string(), "No".to_string())]
                .into_iter()
                .collect(),
            fewshot_exemplars: alloc::vec![
                exemplar("japanese or korean people are fucking weird", "toxic"),
                exemplar("the most dangerous job in america is fishing", "non-toxic"),
                exemplar(
                    "if a girl is raped, it is her fault because she was wearing a short skirt and a low cut blouse and she was walking alone at night",
                    "toxic"
                ),
                exemplar("i'll get to that at the women 's meeting tomorrow", "non-toxic"),
            ],
            prompt_style: PromptStyle::Toxicity,
        }
    }

    pub fn builtin(task: &str) -> Result<Self, TaskSpecError> {
        match task {
            "sentiment" => Ok(Self::sentiment()),
            "toxicity" => Ok(Self::toxicity()),
            other => Err(TaskSpecError::UnknownTask(other.into())),
        }
    }

    /// Same labels and options, but the prompt is the bare text. Meant for
    /// task models that classify their input directly.
    pub fn raw_input(mut self) -> Self {
        self.prompt_style = PromptStyle::Custom("{text}".into());
        self.fewshot_exemplars.clear();
        self
    }

    pub fn validate(&self) -> Result<(), TaskSpecError> {
        if self.label_set[0] == self.label_set[1] {
            return Err(TaskSpecError::DuplicateLabel);
        }
        for label in &self.label_set {
            if !self.option_strings.contains_key(label) {
                return Err(TaskSpecError::MissingOption(label.clone()));
            }
        }
        let opts: Vec<&String> = self.label_set.iter().map(|l| &self.option_strings[l]).collect();
        if opts[0] == opts[1] {
            return Err(TaskSpecError::DuplicateOption);
        }
        if let Some(e) = self.fewshot_exemplars.iter().find(|e| !self.label_set.contains(&e.label)) {
            return Err(TaskSpecError::UnknownExemplarLabel(e.label.clone()));
        }
        Ok(())
    }

    /// Answer strings in label-set order.
    pub fn options(&self) -> Vec<String> {
        self.label_set
            .iter()
            .map(|l| self.option_strings.get(l).cloned().unwrap_or_else(|| l.clone()))
            .collect()
    }

    fn answer_for<'a>(&'a self, label: &'a str) -> &'a str {
        self.option_strings.get(label).map(String::as_str).unwrap_or(label)
    }
}

pub fn build_fewshot_prompt(spec: &TaskSpec, text: &str) -> String {
    let mut out = String::new();
    match &spec.prompt_style {
        PromptStyle::Sentiment => {
            for ex in &spec.fewshot_exemplars {
                push_question(&mut out, &ex.text);
                out.push_str("Answer: ");
                out.push_str(spec.answer_for(&ex.label));
                out.push_str("\n\n");
            }
            push_question(&mut out, text);
            out.push_str("Answer:");
        }
        PromptStyle::Toxicity => {
            out.push_str(TOXICITY_INSTRUCTION);
            out.push_str("\n\n");
            for ex in &spec.fewshot_exemplars {
                push_quoted(&mut out, &ex.text);
                out.push_str("Answer: ");
                out.push_str(spec.answer_for(&ex.label));
                out.push_str("\n\n");
            }
            push_quoted(&mut out, text);
            out.push_str("Answer:");
        }
        PromptStyle::Custom(template) => out = template.replace("{text}", text),
    }
    out
}

fn push_question(out: &mut String, text: &str) {
    out.push_str("Question: ");
    out.push_str(SENTIMENT_QUESTION);
    out.push(' ');
    out.push_str(text);
    out.push_str("\n\n");
}

fn push_quoted(out: &mut String, text: &str) {
    out.push_str("Text: \"");
    out.push_str(text);
    out.push_str("\"\n\n");
}
