use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{normalize, pre_tokenize, NormalizationScheme, TokenizerError, CONTINUATION_PREFIX};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Subword inventory. Token ids are line numbers of the vocabulary file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    cls: u32,
    sep: u32,
    pad: u32,
    unk: u32,
}

impl Vocab {
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self, TokenizerError> {
        let tokens: Vec<String> = tokens.into_iter().collect();
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(TokenizerError::EmptyToken(i + 1));
            }
            if let Some(prev) = ids.insert(t.clone(), i as u32) {
                return Err(TokenizerError::Duplicate {
                    token: t.clone(),
                    first: prev as usize + 1,
                    second: i + 1,
                });
            }
        }
        let special = |name: &'static str| ids.get(name).copied().ok_or(TokenizerError::MissingSpecial(name));
        let (cls, sep, pad, unk) = (special(CLS)?, special(SEP)?, special(PAD)?, special(UNK)?);
        Ok(Self {
            tokens,
            ids,
            cls,
            sep,
            pad,
            unk,
        })
    }

    /// Parses the one-token-per-line format. A single trailing newline is
    /// allowed; CR before LF is stripped.
    pub fn parse(bytes: &[u8]) -> Result<Self, TokenizerError> {
        let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
        let mut tokens = Vec::new();
        if !bytes.is_empty() {
            for (i, line) in body.split(|&b| b == b'\n').enumerate() {
                let line = line.strip_suffix(b"\r").unwrap_or(line);
                let s = std::str::from_utf8(line).map_err(|_| TokenizerError::Utf8(i + 1))?;
                tokens.push(s.to_owned());
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&bytes)
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizerError> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }
}

/// Builds a word-level vocabulary with character fallback for training
/// compact models from scratch.
///
/// Layout: the four specials, then every character seen (word-initial and
/// `##` continuation forms, most frequent first), then whole words by
/// descending frequency until `max_size` is reached. Ties break
/// lexicographically, so the result depends only on the input texts.
pub fn build_vocab<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    scheme: NormalizationScheme,
    max_size: usize,
) -> Vocab {
    let mut words: BTreeMap<String, usize> = BTreeMap::new();
    let mut chars: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        let norm = normalize(text, scheme);
        for word in pre_tokenize(&norm) {
            *words.entry(word.to_owned()).or_default() += 1;
            for (i, c) in word.chars().enumerate() {
                let piece = if i == 0 {
                    c.to_string()
                } else {
                    format!("{CONTINUATION_PREFIX}{c}")
                };
                *chars.entry(piece).or_default() += 1;
            }
        }
    }

    let by_freq = |m: BTreeMap<String, usize>| {
        let mut v: Vec<(String, usize)> = m.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.into_iter().map(|(t, _)| t)
    };

    let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
    let cap = max_size.max(tokens.len());
    let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    for t in by_freq(chars).chain(by_freq(words)) {
        if tokens.len() >= cap {
            break;
        }
        if seen.insert(t.clone()) {
            tokens.push(t);
        }
    }
    Vocab::from_tokens(tokens).expect("built vocabulary is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_assigns_line_numbers() {
        let v = Vocab::parse(b"[PAD]\n[UNK]\n[CLS]\n[SEP]\nclimate\n##s\n").unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("climate"), Some(4));
        assert_eq!(v.token(5), Some("##s"));
        assert_eq!((v.pad_id(), v.unk_id(), v.cls_id(), v.sep_id()), (0, 1, 2, 3));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            Vocab::parse(b"[PAD]\n[UNK]\n[CLS]\n"),
            Err(TokenizerError::MissingSpecial(SEP))
        ));
        assert!(matches!(
            Vocab::parse(b"[PAD]\n[UNK]\n\n[CLS]\n[SEP]\n"),
            Err(TokenizerError::EmptyToken(3))
        ));
        assert!(matches!(
            Vocab::parse(b"[PAD]\n[UNK]\n[CLS]\n[SEP]\na\na\n"),
            Err(TokenizerError::Duplicate {
                first: 5,
                second: 6,
                ..
            })
        ));
        assert!(matches!(Vocab::parse(b"[PAD]\n\xff\n"), Err(TokenizerError::Utf8(2))));
        assert!(Vocab::parse(b"").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let v = Vocab::parse(b"[CLS]\r\n[SEP]\r\n[PAD]\r\n[UNK]\r\nwarm\r\n##ing\r\n").unwrap();
        assert_eq!(Vocab::parse(v.to_file_string().as_bytes()).unwrap(), v);
    }

    #[test]
    fn built_vocab_covers_corpus_without_unk() {
        let texts = ["Global warming affects Énergy costs.", "Climate change, climate risk!"];
        let v = build_vocab(texts, NormalizationScheme::UncasedStripped, 1000);
        assert!(v.contains("climate") && v.contains("energy") && v.contains("##y"));
        for t in texts {
            let seq = super::super::encode(t, &v, NormalizationScheme::UncasedStripped, 64).unwrap();
            assert!(!seq.real_ids().contains(&v.unk_id()));
        }
        // capped size keeps the specials and chars first
        let small = build_vocab(texts, NormalizationScheme::UncasedStripped, 10);
        assert_eq!(small.len(), 10);
        assert_eq!(small.token(0), Some(PAD));
    }
}
