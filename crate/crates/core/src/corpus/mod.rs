//! Labeled sentence corpora in the ClimaText TSV layout.
//!
//! A corpus file is UTF-8 TSV with a mandatory header row. The header must
//! name a `sentence` column and a `label` column; any other columns are
//! ignored. Labels are `1` for climate-change related sentences and `0`
//! otherwise. LF and CRLF line endings are both accepted.

mod segment;
mod split;
pub mod synthetic;

#[cfg(feature = "fetch")]
pub mod edgar;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use segment::{segment_item1a, Segmenter, DEFAULT_ABBREVIATIONS};
pub use split::{stratified_split, SplitSpec};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus is not valid UTF-8 (line {line})")]
    Utf8 { line: usize },
    #[error("corpus header is missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("corpus has no header row")]
    MissingHeader,
    #[error("line {line}: expected at least {expected} columns, found {found}")]
    ShortRow { line: usize, expected: usize, found: usize },
    #[error("line {line}: label `{value}` is not 0 or 1")]
    BadLabel { line: usize, value: String },
    #[error("line {line}: sentence is empty")]
    EmptySentence { line: usize },
    #[error("sentence contains a tab or newline and cannot be written as TSV")]
    Unwritable,
    #[error("corpus is empty")]
    Empty,
    #[error("split fractions must each lie in [0, 1] and sum to 1 (got {train} + {val} + {test})")]
    BadFractions { train: f64, val: f64, test: f64 },
    #[error("stratified split requires both classes, but the corpus has only label {0}")]
    SingleClass(u8),
}

/// Where a sentence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Wikipedia,
    Tenk,
    Claims,
    Synthetic,
    #[default]
    Unknown,
}

/// Binary class label. `Climate` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Other = 0,
    Climate = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Other),
            1 => Some(Label::Climate),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    text: String,
    label: Label,
    source: Source,
}

impl LabeledSentence {
    /// Returns `None` when the text is blank.
    pub fn new(text: impl Into<String>, label: Label, source: Source) -> Option<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return None;
        }
        Some(Self { text, label, source })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn source(&self) -> Source {
        self.source
    }
}

/// An ordered, immutable collection of labeled sentences.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    name: String,
    records: Vec<LabeledSentence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub total: usize,
    pub positives: usize,
    pub negatives: usize,
    pub majority_fraction: f64,
}

impl Corpus {
    pub fn new(name: impl Into<String>, records: Vec<LabeledSentence>) -> Self {
        Self {
            name: name.into(),
            records,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn records(&self) -> &[LabeledSentence] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledSentence> {
        self.records.iter()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Reads a corpus file. The corpus is named after the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        load_climatext(path)
    }

    /// Parses TSV bytes. `source` is attached to every record.
    pub fn parse_tsv(name: &str, bytes: &[u8], source: Source) -> Result<Self, CorpusError> {
        let mut lines = split_lines(bytes);
        let header = loop {
            match lines.next() {
                None => return Err(CorpusError::MissingHeader),
                Some((lineno, raw)) => {
                    let line = as_utf8(raw, lineno)?;
                    let line = line.strip_prefix('\u{feff}').unwrap_or(line);
                    if !line.trim().is_empty() {
                        break line.to_owned();
                    }
                }
            }
        };
        let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
        let sentence_col = columns
            .iter()
            .position(|c| c.eq_ignore_ascii_case("sentence"))
            .ok_or(CorpusError::MissingColumn("sentence"))?;
        let label_col = columns
            .iter()
            .position(|c| c.eq_ignore_ascii_case("label"))
            .ok_or(CorpusError::MissingColumn("label"))?;
        let needed = sentence_col.max(label_col) + 1;

        let mut records = Vec::new();
        for (lineno, raw) in lines {
            let line = as_utf8(raw, lineno)?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < needed {
                return Err(CorpusError::ShortRow {
                    line: lineno,
                    expected: needed,
                    found: fields.len(),
                });
            }
            let raw_label = fields[label_col].trim();
            let label = match raw_label {
                "0" => Label::Other,
                "1" => Label::Climate,
                other => {
                    return Err(CorpusError::BadLabel {
                        line: lineno,
                        value: other.to_owned(),
                    })
                }
            };
            let record = LabeledSentence::new(fields[sentence_col].trim(), label, source)
                .ok_or(CorpusError::EmptySentence { line: lineno })?;
            records.push(record);
        }
        Ok(Self::new(name, records))
    }

    /// Serializes as a two-column TSV that [`Corpus::parse_tsv`] reads back
    /// record for record.
    pub fn to_tsv(&self) -> Result<String, CorpusError> {
        let mut out = String::from("sentence\tlabel\n");
        for r in &self.records {
            if r.text.contains(['\t', '\n', '\r']) || r.text.trim() != r.text {
                return Err(CorpusError::Unwritable);
            }
            out.push_str(&r.text);
            out.push('\t');
            out.push_str(&r.label.to_string());
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let tsv = self.to_tsv()?;
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(tsv.as_bytes()).map_err(io_err)
    }

    pub fn class_stats(&self) -> Result<ClassStats, CorpusError> {
        class_stats(self)
    }

    pub(crate) fn subset(&self, name: String, indices: &[usize]) -> Corpus {
        Corpus::new(name, indices.iter().map(|&i| self.records[i].clone()).collect())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a LabeledSentence;
    type IntoIter = std::slice::Iter<'a, LabeledSentence>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

fn split_lines(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    let trimmed = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let empty = bytes.is_empty();
    trimmed
        .split(|&b| b == b'\n')
        .filter(move |_| !empty)
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix(b"\r").unwrap_or(l)))
}

fn as_utf8(raw: &[u8], line: usize) -> Result<&str, CorpusError> {
    std::str::from_utf8(raw).map_err(|_| CorpusError::Utf8 { line })
}

fn guess_source(name: &str) -> Source {
    let lower = name.to_ascii_lowercase();
    if lower.contains("wiki") {
        Source::Wikipedia
    } else if lower.contains("10k") || lower.contains("10-k") || lower.contains("10_k") {
        Source::Tenk
    } else if lower.contains("claim") {
        Source::Claims
    } else if lower.contains("synthetic") {
        Source::Synthetic
    } else {
        Source::Unknown
    }
}

/// Loads a ClimaText-format TSV file.
pub fn load_climatext(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let source = guess_source(&name);
    Corpus::parse_tsv(&name, &bytes, source)
}

pub fn class_stats(corpus: &Corpus) -> Result<ClassStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let total = corpus.len();
    let positives = corpus.iter().filter(|r| r.label == Label::Climate).count();
    let negatives = total - positives;
    Ok(ClassStats {
        total,
        positives,
        negatives,
        majority_fraction: positives.max(negatives) as f64 / total as f64,
    })
}
