//! Template DSL and cross-product expansion.
//!
//! A pattern is literal text with `{SLOT}` placeholders; `{{` and `}}`
//! stand for literal braces. Slots are ordered by first appearance, and a
//! slot that appears twice takes the same value in both places.
//! Expansion enumerates the cross product of the bound lexicons in
//! row-major order: the leftmost slot varies slowest.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lexicon::{is_valid_name, Lexicon, LexiconSet};
use crate::prompt::builtin_label_set;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Segment {
    /// Unescaped literal text.
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("unclosed brace at byte {offset}")]
    UnclosedBrace { offset: usize },
    #[error("unmatched closing brace at byte {offset}")]
    UnmatchedClose { offset: usize },
    #[error("invalid slot name {name:?} at byte {offset}: expected [A-Z][A-Z0-9_]*")]
    InvalidSlotName { name: String, offset: usize },
    #[error("slot {slot} has no lexicon binding")]
    UnboundSlot { slot: String },
    #[error("binding {slot} does not match any slot in the pattern")]
    UnusedBinding { slot: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("gold label {label:?} is not a label of task {task}")]
    GoldLabelNotInTask { label: String, task: String },
    #[error("slot {slot}: lexicon {lexicon} is not loaded")]
    MissingLexicon { slot: String, lexicon: String },
    #[error("slot {slot}: lexicon {lexicon} is empty")]
    EmptyLexicon { slot: String, lexicon: String },
    #[error("expansion size overflows u64")]
    Overflow,
}

impl TemplateError {
    /// Byte offset into the pattern, for errors that have one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            Self::UnclosedBrace { offset }
            | Self::UnmatchedClose { offset }
            | Self::InvalidSlotName { offset, .. } => Some(*offset),
            _ => None,
        }
    }

    /// Slot the error is about, for errors that have one.
    pub fn slot(&self) -> Option<&str> {
        match self {
            Self::InvalidSlotName { name, .. } => Some(name),
            Self::UnboundSlot { slot }
            | Self::UnusedBinding { slot }
            | Self::MissingLexicon { slot, .. }
            | Self::EmptyLexicon { slot, .. } => Some(slot),
            _ => None,
        }
    }
}

/// Splits a pattern into segments. Adjacent literal text (including
/// escaped braces) is merged into one segment.
pub fn parse_pattern(pattern: &str) -> Result<Vec<Segment>, TemplateError> {
    let bytes = pattern.as_bytes();
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut i = 0;
    let mut run_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                literal.push_str(&pattern[run_start..i]);
                literal.push('{');
                i += 2;
                run_start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                literal.push_str(&pattern[run_start..i]);
                literal.push('}');
                i += 2;
                run_start = i;
            }
            b'{' => {
                literal.push_str(&pattern[run_start..i]);
                let open = i;
                let close = pattern[open + 1..]
                    .find(['}', '{'])
                    .map(|rel| open + 1 + rel)
                    .filter(|&c| bytes[c] == b'}')
                    .ok_or(TemplateError::UnclosedBrace { offset: open })?;
                let name = &pattern[open + 1..close];
                if !is_valid_name(name) {
                    return Err(TemplateError::InvalidSlotName { name: name.into(), offset: open + 1 });
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(core::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(name.into()));
                i = close + 1;
                run_start = i;
            }
            b'}' => return Err(TemplateError::UnmatchedClose { offset: i }),
            _ => i += 1,
        }
    }
    literal.push_str(&pattern[run_start..]);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// Inverse of [`parse_pattern`].
pub fn render_pattern(segments: &[Segment]) -> String {
    let mut out = String::new();
    for seg in segments {
        match seg {
            Segment::Literal(text) => {
                for c in text.chars() {
                    match c {
                        '{' => out.push_str("{{"),
                        '}' => out.push_str("}}"),
                        c => out.push(c),
                    }
                }
            }
            Segment::Slot(name) => {
                out.push('{');
                out.push_str(name);
                out.push('}');
            }
        }
    }
    out
}

/// Template file contents, as stored on disk and exchanged over HTTP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSource {
    pub name: String,
    pub task: String,
    pub test_type: String,
    pub pattern: String,
    pub gold_label: String,
    pub lexicons: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// A validated template. Serializes as its [`TemplateSource`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TemplateSource", into = "TemplateSource")]
pub struct Template {
    pub name: String,
    pub task: String,
    pub test_type: String,
    pub segments: Vec<Segment>,
    pub gold_label: String,
    pub lexicon_bindings: BTreeMap<String, String>,
    pub notes: Option<String>,
}

impl TryFrom<TemplateSource> for Template {
    type Error = TemplateError;

    fn try_from(src: TemplateSource) -> Result<Self, Self::Error> {
        let labels = builtin_label_set(&src.task).ok_or_else(|| TemplateError::UnknownTask(src.task.clone()))?;
        if !labels.contains(&src.gold_label.as_str()) {
            return Err(TemplateError::GoldLabelNotInTask { label: src.gold_label, task: src.task });
        }
        let segments = parse_pattern(&src.pattern)?;
        let template = Template {
            name: src.name,
            task: src.task,
            test_type: src.test_type,
            segments,
            gold_label: src.gold_label,
            lexicon_bindings: src.lexicons,
            notes: src.notes,
        };
        let slots = template.slots();
        if let Some(slot) = slots.iter().find(|s| !template.lexicon_bindings.contains_key(**s)) {
            return Err(TemplateError::UnboundSlot { slot: (*slot).into() });
        }
        if let Some(slot) = template.lexicon_bindings.keys().find(|k| !slots.contains(&k.as_str())) {
            return Err(TemplateError::UnusedBinding { slot: slot.clone() });
        }
        Ok(template)
    }
}

impl From<Template> for TemplateSource {
    fn from(t: Template) -> Self {
        TemplateSource {
            pattern: render_pattern(&t.segments),
            name: t.name,
            task: t.task,
            test_type: t.test_type,
            gold_label: t.gold_label,
            lexicons: t.lexicon_bindings,
            notes: t.notes,
        }
    }
}

impl Template {
    pub fn pattern(&self) -> String {
        render_pattern(&self.segments)
    }

    /// Distinct slot names in first-appearance order.
    pub fn slots(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for seg in &self.segments {
            if let Segment::Slot(name) = seg {
                if !out.contains(&name.as_str()) {
                    out.push(name);
                }
            }
        }
        out
    }

    fn resolve<'a>(&self, lexicons: &'a LexiconSet) -> Result<Vec<(&str, &'a Lexicon)>, TemplateError> {
        self.slots()
            .into_iter()
            .map(|slot| {
                let lex_name = self
                    .lexicon_bindings
                    .get(slot)
                    .ok_or_else(|| TemplateError::UnboundSlot { slot: slot.into() })?;
                let lex = lexicons.get(lex_name).ok_or_else(|| TemplateError::MissingLexicon {
                    slot: slot.into(),
                    lexicon: lex_name.clone(),
                })?;
                if lex.is_empty() {
                    return Err(TemplateError::EmptyLexicon { slot: slot.into(), lexicon: lex_name.clone() });
                }
                Ok((slot, lex))
            })
            .collect()
    }

    /// Lazy row-major iterator over the expanded cases.
    pub fn cases<'a>(&'a self, lexicons: &'a LexiconSet) -> Result<Cases<'a>, TemplateError> {
        let slots = self.resolve(lexicons)?;
        let total = count_of(&slots)?;
        Ok(Cases { template: self, slots, next: 0, total })
    }
}

fn count_of(slots: &[(&str, &Lexicon)]) -> Result<u64, TemplateError> {
    slots
        .iter()
        .try_fold(1u64, |acc, (_, lex)| acc.checked_mul(lex.len() as u64))
        .ok_or(TemplateError::Overflow)
}

/// One instantiated test case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedCase {
    pub template_name: String,
    pub text: String,
    pub gold_label: String,
    pub slot_values: BTreeMap<String, String>,
    pub case_index: u64,
}

pub struct Cases<'a> {
    template: &'a Template,
    slots: Vec<(&'a str, &'a Lexicon)>,
    next: u64,
    total: u64,
}

impl Cases<'_> {
    pub fn total(&self) -> u64 {
        self.total
    }

    fn build(&self, index: u64) -> ExpandedCase {
        // Mixed-radix decomposition, last slot is the fastest digit.
        let mut picks = alloc::vec![0usize; self.slots.len()];
        let mut rem = index;
        for (pos, (_, lex)) in self.slots.iter().enumerate().rev() {
            let radix = lex.len() as u64;
            picks[pos] = (rem % radix) as usize;
            rem /= radix;
        }
        let slot_values: BTreeMap<String, String> = self
            .slots
            .iter()
            .zip(&picks)
            .map(|((slot, lex), &pick)| ((*slot).into(), lex.entries()[pick].clone()))
            .collect();
        let mut text = String::new();
        for seg in &self.template.segments {
            match seg {
                Segment::Literal(lit) => text.push_str(lit),
                Segment::Slot(name) => text.push_str(&slot_values[name]),
            }
        }
        ExpandedCase {
            template_name: self.template.name.clone(),
            text,
            gold_label: self.template.gold_label.clone(),
            slot_values,
            case_index: index,
        }
    }
}

impl Iterator for Cases<'_> {
    type Item = ExpandedCase;

    fn next(&mut self) -> Option<ExpandedCase> {
        if self.next >= self.total {
            return None;
        }
        let case = self.build(self.next);
        self.next += 1;
        Some(case)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = usize::try_from(self.total - self.next).unwrap_or(usize::MAX);
        (left, Some(left))
    }

    fn nth(&mut self, n: usize) -> Option<ExpandedCase> {
        self.next = self.next.saturating_add(n as u64).min(self.total);
        self.next()
    }
}

pub fn expand(template: &Template, lexicons: &LexiconSet) -> Result<Vec<ExpandedCase>, TemplateError> {
    Ok(template.cases(lexicons)?.collect())
}

/// Product of the bound lexicon sizes; does not materialize any case.
pub fn expansion_count(template: &Template, lexicons: &LexiconSet) -> Result<u64, TemplateError> {
    count_of(&template.resolve(lexicons)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn lit(s: &str) -> Segment {
        Segment::Literal(s.into())
    }
    fn slot(s: &str) -> Segment {
        Segment::Slot(s.into())
    }

    fn source(pattern: &str, bindings: &[(&str, &str)]) -> TemplateSource {
        TemplateSource {
            name: "t".into(),
            task: "sentiment".into(),
            test_type: "Negation".into(),
            pattern: pattern.into(),
            gold_label: "negative".into(),
            lexicons: bindings.iter().map(|(s, l)| (s.to_string(), l.to_string())).collect(),
            notes: None,
        }
    }

    fn lexset(spec: &[(&str, &[&str])]) -> LexiconSet {
        spec.iter()
            .map(|(name, entries)| Lexicon::new(*name, entries.iter().map(|e| e.to_string()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn parses_table_one_pattern() {
        let segs = parse_pattern("This {NOUN} is not {NEG_ADJ}.").unwrap();
        assert_eq!(segs, vec![lit("This "), slot("NOUN"), lit(" is not "), slot("NEG_ADJ"), lit(".")]);
    }

    #[test]
    fn pattern_without_slots() {
        assert_eq!(parse_pattern("hello world").unwrap(), vec![lit("hello world")]);
        let t = Template::try_from(source("hello world", &[])).unwrap();
        assert_eq!(expansion_count(&t, &LexiconSet::new()).unwrap(), 1);
        let cases = expand(&t, &LexiconSet::new()).unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].text, "hello world");
    }

    #[test]
    fn unclosed_brace_reports_offset() {
        assert_eq!(parse_pattern("This {NOUN is bad."), Err(TemplateError::UnclosedBrace { offset: 5 }));
        assert_eq!(parse_pattern("x {A"), Err(TemplateError::UnclosedBrace { offset: 2 }));
        assert_eq!(parse_pattern("{A {B}"), Err(TemplateError::UnclosedBrace { offset: 0 }));
    }

    #[test]
    fn stray_close_and_bad_names() {
        assert_eq!(parse_pattern("a } b"), Err(TemplateError::UnmatchedClose { offset: 2 }));
        assert!(matches!(
            parse_pattern("This {noun}."),
            Err(TemplateError::InvalidSlotName { ref name, offset: 6 }) if name == "noun"
        ));
        assert!(matches!(parse_pattern("{}"), Err(TemplateError::InvalidSlotName { .. })));
        assert!(matches!(parse_pattern("{POS ADJ}"), Err(TemplateError::InvalidSlotName { .. })));
    }

    #[test]
    fn escaped_braces() {
        let segs = parse_pattern("{{json}} {A}}}").unwrap();
        assert_eq!(segs, vec![lit("{json} "), slot("A"), lit("}")]);
        assert_eq!(render_pattern(&segs), "{{json}} {A}}}");
    }

    #[test]
    fn binding_errors() {
        assert_eq!(
            Template::try_from(source("This {NOUN}.", &[])),
            Err(TemplateError::UnboundSlot { slot: "NOUN".into() })
        );
        assert_eq!(
            Template::try_from(source("This.", &[("NOUN", "NOUN")])),
            Err(TemplateError::UnusedBinding { slot: "NOUN".into() })
        );
        let mut src = source("x", &[]);
        src.gold_label = "toxic".into();
        assert!(matches!(Template::try_from(src), Err(TemplateError::GoldLabelNotInTask { .. })));
        let mut src = source("x", &[]);
        src.task = "nli".into();
        assert!(matches!(Template::try_from(src), Err(TemplateError::UnknownTask(_))));
    }

    #[test]
    fn expands_cross_product_in_row_major_order() {
        let t = Template::try_from(source("This {NOUN} is not {NEG_ADJ}.", &[("NOUN", "NOUN"), ("NEG_ADJ", "NEG")]))
            .unwrap();
        let lex = lexset(&[("NOUN", &["book", "movie"]), ("NEG", &["awful"])]);
        let texts: Vec<String> = expand(&t, &lex).unwrap().into_iter().map(|c| c.text).collect();
        assert_eq!(texts, ["This book is not awful.", "This movie is not awful."]);

        let lex = lexset(&[("NOUN", &["book", "movie"]), ("NEG", &["awful", "dull", "bad"])]);
        let cases = expand(&t, &lex).unwrap();
        assert_eq!(cases.len(), 6);
        assert_eq!(cases[1].text, "This book is not dull.");
        assert_eq!(cases[3].text, "This movie is not awful.");
        for (i, c) in cases.iter().enumerate() {
            assert_eq!(c.case_index, i as u64);
            assert_eq!(c.gold_label, "negative");
        }
        assert_eq!(cases[4].slot_values["NOUN"], "movie");
        assert_eq!(cases[4].slot_values["NEG_ADJ"], "dull");
    }

    #[test]
    fn repeated_slot_shares_one_value() {
        let t = Template::try_from(source("{A} and {A} {B}", &[("A", "A"), ("B", "B")])).unwrap();
        let lex = lexset(&[("A", &["x", "y"]), ("B", &["1", "2", "3"])]);
        assert_eq!(expansion_count(&t, &lex).unwrap(), 6);
        assert_eq!(expand(&t, &lex).unwrap()[3].text, "y and y 1");
    }

    #[test]
    fn missing_and_empty_lexicons() {
        let t = Template::try_from(source("{NOUN} {ADJ}", &[("NOUN", "NOUN"), ("ADJ", "ADJ")])).unwrap();
        let lex = lexset(&[("NOUN", &["book"])]);
        assert_eq!(
            expand(&t, &lex),
            Err(TemplateError::MissingLexicon { slot: "ADJ".into(), lexicon: "ADJ".into() })
        );
        assert!(expansion_count(&t, &lex).is_err());
    }

    #[test]
    fn lazy_iterator_nth_matches_materialized() {
        let t = Template::try_from(source("{A}{B}{C}", &[("A", "A"), ("B", "B"), ("C", "C")])).unwrap();
        let lex = lexset(&[("A", &["a", "b", "c"]), ("B", &["1", "2"]), ("C", &["x", "y", "z", "w"])]);
        let all = expand(&t, &lex).unwrap();
        let mut it = t.cases(&lex).unwrap();
        assert_eq!(it.total(), 24);
        assert_eq!(it.nth(17).unwrap(), all[17]);
        assert_eq!(it.next().unwrap(), all[18]);
        assert_eq!(t.cases(&lex).unwrap().nth(100), None);
    }

    #[test]
    fn template_serializes_as_source() {
        let src = source("This {NOUN}.", &[("NOUN", "NOUN")]);
        let t = Template::try_from(src.clone()).unwrap();
        assert_eq!(TemplateSource::from(t), src);
    }
}
