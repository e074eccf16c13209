//! Rule-based first-sentence extraction.
//!
//! A sentence ends at a run of `.`, `!` or `?` (plus any closing quotes or
//! brackets right after it) when the run is followed by the end of the
//! text, or by whitespace and then an uppercase letter, an opening quote
//! or bracket, a digit, or the end of the text. A lone `.` that closes a
//! known abbreviation never ends a sentence.

/// Lowercase, including the final period.
pub const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "st.", "vs.", "etc.", "e.g.", "i.e.", "jr.", "sr.", "prof.",
];

pub trait SentenceSegmenter {
    /// Byte length of the first sentence of `text`.
    fn first_sentence_end(&self, text: &str) -> usize;

    fn first_sentence<'a>(&self, text: &'a str) -> &'a str {
        &text[..self.first_sentence_end(text)]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSegmenter;

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

fn ends_with_abbreviation(head: &str) -> bool {
    let word = head.rsplit(char::is_whitespace).next().unwrap_or(head);
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    ABBREVIATIONS.iter().any(|a| word.eq_ignore_ascii_case(a))
}

impl SentenceSegmenter for RuleSegmenter {
    fn first_sentence_end(&self, text: &str) -> usize {
        let mut iter = text.char_indices().peekable();
        while let Some((start, c)) = iter.next() {
            if !is_terminator(c) {
                continue;
            }
            let mut end = start + c.len_utf8();
            let mut run_len = 1;
            while let Some(&(i, c)) = iter.peek() {
                if !is_terminator(c) {
                    break;
                }
                end = i + c.len_utf8();
                run_len += 1;
                iter.next();
            }
            while let Some(&(i, c)) = iter.peek() {
                if !is_closer(c) {
                    break;
                }
                end = i + c.len_utf8();
                iter.next();
            }
            let rest = &text[end..];
            let boundary = match rest.chars().next() {
                None => true,
                Some(c) if c.is_whitespace() => match rest.trim_start().chars().next() {
                    None => true,
                    Some(n) => n.is_uppercase() || n.is_ascii_digit() || is_opener(n),
                },
                Some(_) => false,
            };
            if !boundary {
                continue;
            }
            let abbreviated = run_len == 1 && &text[start..start + 1] == "." && ends_with_abbreviation(&text[..start + 1]);
            if !abbreviated {
                return end;
            }
        }
        text.len()
    }
}

/// First sentence per [`RuleSegmenter`]; the whole input when there is no
/// sentence boundary.
pub fn extract_first_sentence(text: &str) -> &str {
    RuleSegmenter.first_sentence(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_cases() {
        assert_eq!(extract_first_sentence("Great movie. I loved it."), "Great movie.");
        assert_eq!(extract_first_sentence("no terminator here"), "no terminator here");
        assert_eq!(extract_first_sentence("Mr. Smith arrived. Then left."), "Mr. Smith arrived.");
    }

    #[test]
    fn abbreviation_only_suppresses_single_period() {
        assert_eq!(extract_first_sentence("Stop etc.! Next."), "Stop etc.!");
        assert_eq!(extract_first_sentence("He met Dr. Who. Then."), "He met Dr. Who.");
    }

    #[test]
    fn multibyte_text() {
        assert_eq!(extract_first_sentence("Très bien. Ça va."), "Très bien.");
        assert_eq!(extract_first_sentence("日本語。 Next"), "日本語。 Next");
    }
}
