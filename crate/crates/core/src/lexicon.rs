//! Named substitution lists that fill template slots.
//!
//! The on-disk format is one entry per line: surrounding whitespace is
//! trimmed, blank lines are skipped and a line whose first non-blank
//! character is `#` is a comment.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// `[A-Z][A-Z0-9_]*`, shared by lexicon names and template slot names.
pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    name: String,
    entries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexiconError {
    #[error("invalid lexicon name {0:?}: expected [A-Z][A-Z0-9_]*")]
    InvalidName(String),
    #[error("lexicon {0} has no entries")]
    Empty(String),
    #[error("lexicon {name}: {}", render_issues(.issues))]
    Invalid { name: String, issues: Vec<LexiconIssue> },
}

/// One problem found while validating a lexicon, with its 1-based line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconIssue {
    pub line: usize,
    pub kind: IssueKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueKind {
    /// `first_line` is where the entry was first seen.
    Duplicate { entry: String, first_line: usize },
    EmbeddedNewline,
    EmptyEntry,
}

impl fmt::Display for LexiconIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            IssueKind::Duplicate { entry, first_line } => write!(
                f,
                "line {}: duplicate entry {entry:?} (first seen on line {first_line})",
                self.line
            ),
            IssueKind::EmbeddedNewline => write!(f, "line {}: entry contains a newline", self.line),
            IssueKind::EmptyEntry => write!(f, "line {}: empty entry", self.line),
        }
    }
}

fn render_issues(issues: &[LexiconIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Lexicon {
    /// Builds a lexicon from in-memory entries, applying the same checks as
    /// [`validate_lexicon`]. Entry positions are reported as 1-based indices.
    pub fn new(name: impl Into<String>, entries: Vec<String>) -> Result<Self, LexiconError> {
        let name = name.into();
        if !is_valid_name(&name) {
            return Err(LexiconError::InvalidName(name));
        }
        let mut issues = Vec::new();
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, entry) in entries.iter().enumerate() {
            let line = i + 1;
            if entry.is_empty() {
                issues.push(LexiconIssue { line, kind: IssueKind::EmptyEntry });
            } else if entry.contains(['\n', '\r']) {
                issues.push(LexiconIssue { line, kind: IssueKind::EmbeddedNewline });
            } else if let Some(&first_line) = seen.get(entry.as_str()) {
                issues.push(LexiconIssue {
                    line,
                    kind: IssueKind::Duplicate { entry: entry.clone(), first_line },
                });
            } else {
                seen.insert(entry, line);
            }
        }
        if !issues.is_empty() {
            return Err(LexiconError::Invalid { name, issues });
        }
        if entries.is_empty() {
            return Err(LexiconError::Empty(name));
        }
        Ok(Self { name, entries })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serializes back to the line format. Always ends with a newline.
    pub fn to_lex_string(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(entry);
            out.push('\n');
        }
        out
    }
}

/// Parses lexicon file text. Every duplicate is reported with the line it
/// occurs on, not just the first one.
pub fn validate_lexicon(name: &str, raw: &str) -> Result<Lexicon, LexiconError> {
    if !is_valid_name(name) {
        return Err(LexiconError::InvalidName(name.into()));
    }
    let mut entries = Vec::new();
    let mut issues = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        let entry = line.trim();
        if entry.is_empty() || entry.starts_with('#') {
            continue;
        }
        let line_no = i + 1;
        if let Some(&first_line) = seen.get(entry) {
            issues.push(LexiconIssue {
                line: line_no,
                kind: IssueKind::Duplicate { entry: entry.into(), first_line },
            });
            continue;
        }
        seen.insert(entry.into(), line_no);
        entries.push(entry.into());
    }
    if !issues.is_empty() {
        return Err(LexiconError::Invalid { name: name.into(), issues });
    }
    if entries.is_empty() {
        return Err(LexiconError::Empty(name.into()));
    }
    Ok(Lexicon { name: name.into(), entries })
}

/// Lexicons keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LexiconSet {
    by_name: BTreeMap<String, Lexicon>,
}

impl LexiconSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts, replacing any lexicon with the same name.
    pub fn insert(&mut self, lexicon: Lexicon) -> Option<Lexicon> {
        self.by_name.insert(lexicon.name.clone(), lexicon)
    }

    pub fn get(&self, name: &str) -> Option<&Lexicon> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Lexicon> {
        self.by_name.values()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

impl FromIterator<Lexicon> for LexiconSet {
    fn from_iter<I: IntoIterator<Item = Lexicon>>(iter: I) -> Self {
        let mut set = Self::new();
        for lex in iter {
            set.insert(lex);
        }
        set
    }
}
