//! Text normalization and WordPiece-style subword encoding.
//!
//! Two normalization schemes are supported: `uncased_stripped` lowercases and
//! removes accents (canonical decomposition, then combining marks dropped),
//! and `cased_raw` leaves the text untouched. Encoding always uses greedy
//! longest-match subwords with `##` continuation pieces, wrapped in
//! `[CLS] ... [SEP]` and padded to a fixed length.

mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub use vocab::{build_vocab, Vocab, CLS, PAD, SEP, UNK};

pub const DEFAULT_MAX_LEN: usize = 128;
pub const CONTINUATION_PREFIX: &str = "##";
/// Words longer than this (in chars) map straight to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("max_len must be at least 2 (got {0})")]
    MaxLenTooSmall(usize),
    #[error("cannot read vocabulary {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary is not valid UTF-8 (line {0})")]
    Utf8(usize),
    #[error("vocabulary line {0} is empty")]
    EmptyToken(usize),
    #[error("vocabulary token `{token}` appears twice (lines {first} and {second})")]
    Duplicate { token: String, first: usize, second: usize },
    #[error("vocabulary lacks special token {0}")]
    MissingSpecial(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScheme {
    /// Lowercase and strip accents.
    #[default]
    UncasedStripped,
    /// Leave text as is.
    CasedRaw,
}

pub fn normalize(text: &str, scheme: NormalizationScheme) -> String {
    match scheme {
        NormalizationScheme::CasedRaw => text.to_owned(),
        NormalizationScheme::UncasedStripped => text.to_lowercase().nfd().filter(|c| !is_combining_mark(*c)).collect(),
    }
}

fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace() && !is_combining_mark(c)
}

/// Splits on whitespace, then breaks punctuation out into single-char words.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                let end = i + c.len_utf8();
                words.push(&chunk[i..end]);
                start = end;
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

/// Greedy longest-prefix subword split of one word. If some position has no
/// matching piece the whole word becomes `[UNK]`.
pub fn wordpiece(word: &str, vocab: &Vocab) -> Vec<String> {
    if word.chars().count() > MAX_WORD_CHARS {
        return vec![UNK.to_owned()];
    }
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < word.len() {
        let mut end = word.len();
        let mut found = None;
        while end > start {
            if !word.is_char_boundary(end) {
                end -= 1;
                continue;
            }
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.push_str(&word[start..end]);
            if vocab.contains(&candidate) {
                found = Some(end);
                break;
            }
            end -= 1;
        }
        match found {
            Some(end) => {
                pieces.push(candidate.clone());
                start = end;
            }
            None => return vec![UNK.to_owned()],
        }
    }
    pieces
}

/// Fixed-length encoding of one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub real_length: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Ids of the non-padding prefix.
    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.real_length]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSettings {
    #[serde(default)]
    pub scheme: NormalizationScheme,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        Self {
            scheme: NormalizationScheme::default(),
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Normalizes, subword-splits and frames `text` as `[CLS] pieces [SEP]`,
/// keeping the head of over-long inputs, then pads to `max_len`.
pub fn encode(
    text: &str,
    vocab: &Vocab,
    scheme: NormalizationScheme,
    max_len: usize,
) -> Result<TokenSequence, TokenizerError> {
    if max_len < 2 {
        return Err(TokenizerError::MaxLenTooSmall(max_len));
    }
    let normalized = normalize(text, scheme);
    let budget = max_len - 2;
    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls_id());
    'words: for word in pre_tokenize(&normalized) {
        for piece in wordpiece(word, vocab) {
            if ids.len() - 1 == budget {
                break 'words;
            }
            ids.push(vocab.id(&piece).unwrap_or(vocab.unk_id()));
        }
    }
    ids.push(vocab.sep_id());
    let real_length = ids.len();
    ids.resize(max_len, vocab.pad_id());
    let mask = (0..max_len).map(|i| u8::from(i < real_length)).collect();
    Ok(TokenSequence { ids, mask, real_length })
}

/// Reusable encoder bundling a vocabulary with its settings.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    settings: TokenizerSettings,
}

impl Tokenizer {
    pub fn new(vocab: Vocab, settings: TokenizerSettings) -> Result<Self, TokenizerError> {
        if settings.max_len < 2 {
            return Err(TokenizerError::MaxLenTooSmall(settings.max_len));
        }
        Ok(Self { vocab, settings })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn settings(&self) -> TokenizerSettings {
        self.settings
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        encode(text, &self.vocab, self.settings.scheme, self.settings.max_len)
            .expect("max_len validated at construction")
    }

    pub fn encode_all<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Vec<TokenSequence> {
        texts.into_iter().map(|t| self.encode(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(tokens: &[&str]) -> Vocab {
        let mut all = vec![PAD, UNK, CLS, SEP];
        all.extend_from_slice(tokens);
        Vocab::from_tokens(all.into_iter().map(String::from)).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize("Énergy TRANSITION", NormalizationScheme::UncasedStripped),
            "energy transition"
        );
        assert_eq!(
            normalize("Énergy TRANSITION", NormalizationScheme::CasedRaw),
            "Énergy TRANSITION"
        );
        assert_eq!(normalize("", NormalizationScheme::UncasedStripped), "");
        assert_eq!(
            normalize("Ça Déçoit Ñandú", NormalizationScheme::UncasedStripped),
            "ca decoit nandu"
        );
    }

    #[test]
    fn wordpiece_examples() {
        let v = vocab(&["warm", "##ing", "w", "##a", "climate"]);
        assert_eq!(wordpiece("warming", &v), vec!["warm", "##ing"]);
        assert_eq!(wordpiece("climate", &v), vec!["climate"]);
        assert_eq!(wordpiece("xylophone", &v), vec![UNK]);
        // greedy: "wa" is not a word-initial piece, so "w" + "##a" + ... fails on "r"
        assert_eq!(wordpiece("war", &v), vec![UNK]);
    }

    #[test]
    fn wordpiece_handles_multibyte() {
        let v = vocab(&["é", "##t", "##é"]);
        assert_eq!(wordpiece("été", &v), vec!["é", "##t", "##é"]);
    }

    #[test]
    fn pre_tokenize_splits_punctuation() {
        assert_eq!(
            pre_tokenize("CO2, emissions (2018)."),
            vec!["CO2", ",", "emissions", "(", "2018", ")", "."]
        );
        assert!(pre_tokenize("   ").is_empty());
    }

    #[test]
    fn encode_empty_text() {
        let v = vocab(&[]);
        let seq = encode("", &v, NormalizationScheme::UncasedStripped, 128).unwrap();
        assert_eq!(seq.real_length, 2);
        assert_eq!(seq.mask.iter().map(|&m| m as usize).sum::<usize>(), 2);
        assert_eq!(&seq.ids[..2], &[v.cls_id(), v.sep_id()]);
        assert!(seq.ids[2..].iter().all(|&i| i == v.pad_id()));
    }

    #[test]
    fn encode_truncates_keeping_head() {
        let v = vocab(&["a", "b"]);
        let text = vec!["a"; 299].join(" ") + " b";
        let seq = encode(&text, &v, NormalizationScheme::UncasedStripped, 128).unwrap();
        assert_eq!(seq.real_length, 128);
        assert_eq!(seq.ids[127], v.sep_id());
        assert_eq!(seq.ids[0], v.cls_id());
        assert!(seq.ids[1..127].iter().all(|&i| i == v.id("a").unwrap()));
        assert!(seq.mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn encode_rejects_tiny_max_len() {
        let v = vocab(&[]);
        assert!(matches!(
            encode("x", &v, NormalizationScheme::CasedRaw, 1),
            Err(TokenizerError::MaxLenTooSmall(1))
        ));
        let seq = encode("x y z", &v, NormalizationScheme::CasedRaw, 2).unwrap();
        assert_eq!(seq.ids, vec![v.cls_id(), v.sep_id()]);
    }

    #[test]
    fn encode_is_deterministic_and_scheme_sensitive() {
        let v = vocab(&["climate", "Climate"]);
        let a = encode("Climate", &v, NormalizationScheme::UncasedStripped, 8).unwrap();
        assert_eq!(
            a,
            encode("Climate", &v, NormalizationScheme::UncasedStripped, 8).unwrap()
        );
        let b = encode("Climate", &v, NormalizationScheme::CasedRaw, 8).unwrap();
        assert_eq!(a.ids[1], v.id("climate").unwrap());
        assert_eq!(b.ids[1], v.id("Climate").unwrap());
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in "\\PC{0,40}") {
            for scheme in [NormalizationScheme::UncasedStripped, NormalizationScheme::CasedRaw] {
                let once = normalize(&s, scheme);
                prop_assert_eq!(normalize(&once, scheme), once.clone());
            }
        }

        #[test]
        fn uncased_output_has_no_upper_or_marks(s in "\\PC{0,40}") {
            let out = normalize(&s, NormalizationScheme::UncasedStripped);
            for c in out.chars() {
                prop_assert!(!is_combining_mark(c));
                // letters with a lowercase mapping must already be lowercase
                prop_assert!(!(c.is_uppercase() && c.to_lowercase().next() != Some(c)), "{:?}", c);
            }
        }

        #[test]
        fn sequence_shape_invariants(s in "[a-zé ,.]{0,300}", max_len in 2usize..64) {
            let v = vocab(&["a", "b", "c", "##a", "##b", "e", "##e", ","]);
            let seq = encode(&s, &v, NormalizationScheme::UncasedStripped, max_len).unwrap();
            prop_assert_eq!(seq.ids.len(), max_len);
            prop_assert_eq!(seq.mask.len(), max_len);
            prop_assert_eq!(seq.mask.iter().map(|&m| m as usize).sum::<usize>(), seq.real_length);
            prop_assert!(seq.real_length >= 2 && seq.real_length <= max_len);
            prop_assert_eq!(seq.ids[0], v.cls_id());
            prop_assert_eq!(seq.ids[seq.real_length - 1], v.sep_id());
            for i in 0..max_len {
                prop_assert_eq!(seq.mask[i] == 1, i < seq.real_length);
                if i >= seq.real_length {
                    prop_assert_eq!(seq.ids[i], v.pad_id());
                }
            }
        }

        #[test]
        fn pieces_rejoin_to_word(word in "[a-d]{1,12}") {
            let v = vocab(&["a", "b", "c", "d", "ab", "##a", "##b", "##c", "##d", "##cd", "abc"]);
            let pieces = wordpiece(&word, &v);
            prop_assert!(!pieces.iter().any(|p| p == UNK));
            let joined: String = pieces.iter().map(|p| p.trim_start_matches(CONTINUATION_PREFIX)).collect();
            prop_assert_eq!(joined, word);
        }
    }
}
