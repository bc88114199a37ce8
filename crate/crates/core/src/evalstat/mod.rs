//! Classification metrics, repeated-run samples, summary statistics and the
//! pooled-variance two-sample t-test.

mod report;
mod runs;
mod student_t;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Label};

pub use report::{
    parse_table, reference_rows, render_comparison, render_markdown_table, render_text_table, Comparison, TableRow,
    REFERENCE_VALUES,
};
pub use runs::{derive_seeds, repeated_runs, RunFailure, RunOptions, RunSample};
pub use student_t::{
    inc_beta, ln_beta, ln_gamma, student_t_two_sided_p, student_t_two_sided_p_with_tol, student_t_upper_p,
    DEFAULT_TOLERANCE,
};

#[derive(Debug, Error)]
pub enum StatError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate: input is empty")]
    Empty,
    #[error("sample standard deviation needs n >= 2 (n - 1 denominator), got n = {0}")]
    TooFewRuns(usize),
    #[error("both samples have zero variance but different means; t is unbounded")]
    DegenerateVariance,
    #[error("degrees of freedom must be at least 1")]
    ZeroDf,
    #[error("unknown metric `{0}` (expected accuracy, precision, recall, f1 or specificity)")]
    UnknownMetric(String),
    #[error("malformed run sample: {0}")]
    Sample(String),
    #[error("malformed table: {0}")]
    Table(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Counts outcomes with label 1 as the positive class.
pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix, StatError> {
    if predictions.len() != labels.len() {
        return Err(StatError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(StatError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, l) in predictions.iter().zip(labels) {
        match (p, l) {
            (Label::Climate, Label::Climate) => cm.tp += 1,
            (Label::Climate, Label::Other) => cm.fp += 1,
            (Label::Other, Label::Climate) => cm.fn_ += 1,
            (Label::Other, Label::Other) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// The five scores. A ratio whose denominator is zero is reported as 0 and
/// listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<MetricKind>,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Accuracy => self.accuracy,
            MetricKind::Precision => self.precision,
            MetricKind::Recall => self.recall,
            MetricKind::F1 => self.f1,
            MetricKind::Specificity => self.specificity,
        }
    }

    pub fn is_undefined(&self, kind: MetricKind) -> bool {
        self.undefined.contains(&kind)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, StatError> {
    let total = cm.total();
    if total == 0 {
        return Err(StatError::Empty);
    }
    let mut undefined = Vec::new();
    let mut ratio = |num: u64, den: u64, kind: MetricKind| {
        if den == 0 {
            undefined.push(kind);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let precision = ratio(cm.tp, cm.tp + cm.fp, MetricKind::Precision);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, MetricKind::Recall);
    let specificity = ratio(cm.tn, cm.tn + cm.fp, MetricKind::Specificity);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined.push(MetricKind::F1);
        0.0
    };
    undefined.sort();
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        specificity,
        undefined,
        confusion: *cm,
    })
}

pub fn evaluate(predictions: &[Label], labels: &[Label]) -> Result<Metrics, StatError> {
    metrics(&confusion(predictions, labels)?)
}

/// Accuracy of always predicting the larger class.
pub fn majority_baseline(corpus: &Corpus) -> Result<f64, StatError> {
    Ok(corpus.class_stats()?.majority_fraction)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Accuracy,
    Precision,
    F1,
    Recall,
    Specificity,
}

impl MetricKind {
    /// Column order of the comparison table.
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Accuracy,
        MetricKind::Precision,
        MetricKind::F1,
        MetricKind::Recall,
        MetricKind::Specificity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Precision => "precision",
            MetricKind::F1 => "f1",
            MetricKind::Recall => "recall",
            MetricKind::Specificity => "specificity",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "Accuracy",
            MetricKind::Precision => "Precision",
            MetricKind::F1 => "F1",
            MetricKind::Recall => "Recall",
            MetricKind::Specificity => "Specificity",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = StatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| StatError::UnknownMetric(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub sd: f64,
    pub n: usize,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Result<Self, StatError> {
        let n = values.len();
        if n < 2 {
            return Err(StatError::TooFewRuns(n));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Ok(Self {
            mean,
            sd: (ss / (n - 1) as f64).sqrt(),
            n,
        })
    }
}

pub fn summarize(sample: &RunSample, metric: MetricKind) -> Result<SummaryStats, StatError> {
    SummaryStats::from_values(&sample.values(metric))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// Alternative hypothesis: mean A > mean B.
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t: f64,
    pub df: u64,
    pub p_two_sided: f64,
    /// `P(T ≥ t)`, the p-value for "A is better than B".
    pub p_one_sided: f64,
}

impl TestResult {
    pub fn p(&self, alternative: Alternative) -> f64 {
        match alternative {
            Alternative::TwoSided => self.p_two_sided,
            Alternative::Greater => self.p_one_sided,
        }
    }
}

/// Two-sample Student t-test assuming equal variances.
pub fn pooled_t_test(a: &SummaryStats, b: &SummaryStats) -> Result<TestResult, StatError> {
    for s in [a, b] {
        if s.n < 2 {
            return Err(StatError::TooFewRuns(s.n));
        }
    }
    let df = (a.n + b.n - 2) as u64;
    let (na, nb) = (a.n as f64, b.n as f64);
    let pooled_var = ((na - 1.0) * a.sd * a.sd + (nb - 1.0) * b.sd * b.sd) / df as f64;
    let diff = a.mean - b.mean;
    if pooled_var == 0.0 {
        if diff == 0.0 {
            return Ok(TestResult {
                t: 0.0,
                df,
                p_two_sided: 1.0,
                p_one_sided: 0.5,
            });
        }
        return Err(StatError::DegenerateVariance);
    }
    let t = diff / (pooled_var.sqrt() * (1.0 / na + 1.0 / nb).sqrt());
    let p_two_sided = student_t_two_sided_p(t, df).ok_or(StatError::ZeroDf)?;
    let p_one_sided = student_t_upper_p(t, df).ok_or(StatError::ZeroDf)?;
    Ok(TestResult {
        t,
        df,
        p_two_sided,
        p_one_sided,
    })
}
