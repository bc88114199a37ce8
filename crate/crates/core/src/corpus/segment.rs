//! Rule-based sentence segmentation for pre-extracted 10-K Item 1A text.
//!
//! A sentence ends at `.`, `!` or `?` (optionally followed by more terminal
//! punctuation and closing quotes or brackets) when the next character is
//! whitespace or the end of input. A period does not end a sentence when the
//! word it terminates is on the abbreviation guard list. Blank lines always
//! end a sentence, since Item 1A headings usually carry no punctuation.

use std::collections::HashSet;
use std::sync::OnceLock;

/// The shipped abbreviation guard list.
pub const DEFAULT_ABBREVIATIONS: &str = include_str!("../../data/abbreviations.txt");

const CLOSERS: &[char] = &['"', '\'', ')', ']', '}', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '{', '\u{201c}', '\u{2018}'];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    guards: HashSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::from_list(DEFAULT_ABBREVIATIONS)
    }
}

impl Segmenter {
    /// Builds a segmenter from a guard list in the data-file format: one
    /// abbreviation per line, `#` comments allowed.
    pub fn from_list(list: &str) -> Self {
        Self::with_abbreviations(
            list.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn with_abbreviations<'a>(abbrevs: impl IntoIterator<Item = &'a str>) -> Self {
        let guards = abbrevs
            .into_iter()
            .map(|a| a.trim().to_lowercase())
            .filter(|a| !a.is_empty())
            .collect();
        Self { guards }
    }

    pub fn is_guarded(&self, word: &str) -> bool {
        let word = word.trim_start_matches(OPENERS).to_lowercase();
        self.guards.contains(&word)
    }

    /// Splits `text` into non-empty sentences. Runs of whitespace inside a
    /// sentence, line breaks included, become a single space.
    pub fn segment(&self, text: &str) -> Vec<String> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut out = Vec::new();
        let mut start = 0usize;
        let mut i = 0usize;

        let push = |from: usize, to: usize, out: &mut Vec<String>| {
            let s = text[from..to].split_whitespace().collect::<Vec<_>>().join(" ");
            if !s.is_empty() {
                out.push(s);
            }
        };

        while i < chars.len() {
            let (pos, c) = chars[i];
            if c == '\n' {
                // blank line: newline, optional non-newline whitespace, newline
                let mut j = i + 1;
                while j < chars.len() && chars[j].1.is_whitespace() && chars[j].1 != '\n' {
                    j += 1;
                }
                if j < chars.len() && chars[j].1 == '\n' {
                    push(start, pos, &mut out);
                    start = chars[j].0;
                    i = j + 1;
                    continue;
                }
            }
            if !is_terminal(c) {
                i += 1;
                continue;
            }
            let mut j = i + 1;
            while j < chars.len() && is_terminal(chars[j].1) {
                j += 1;
            }
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
            if at_boundary && !(c == '.' && j == i + 1 && self.guards_period(text, start, pos)) {
                let end = if j == chars.len() { text.len() } else { chars[j].0 };
                push(start, end, &mut out);
                start = end;
            }
            i = j;
        }
        push(start, text.len(), &mut out);
        out
    }

    /// Whether the period at byte `dot` terminates a guarded abbreviation.
    fn guards_period(&self, text: &str, start: usize, dot: usize) -> bool {
        let head = &text[start..dot];
        let word_start = head
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_whitespace())
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(0);
        let word = &text[start + word_start..=dot];
        self.is_guarded(word)
    }
}

/// Segments Item 1A text with the default abbreviation guard list.
pub fn segment_item1a(text: &str) -> Vec<String> {
    static DEFAULT: OnceLock<Segmenter> = OnceLock::new();
    DEFAULT.get_or_init(Segmenter::default).segment(text)
}
