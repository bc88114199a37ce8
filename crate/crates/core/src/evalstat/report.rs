//! Comparison tables with the columns
//! Model | Accuracy | Precision | F1 | Recall | Specificity | Deviation | Runs,
//! rendered as Markdown or aligned plain text, and parsed back.

use serde::{Deserialize, Serialize};

use super::{summarize, Alternative, MetricKind, RunSample, StatError, SummaryStats, TestResult};

/// Baseline figures shipped for display only.
pub const REFERENCE_VALUES: &str = include_str!("../../data/reference_values.json");

const UNKNOWN: &str = "Unknown";
const HEADER: [&str; 8] = [
    "Model",
    "Accuracy",
    "Precision",
    "F1",
    "Recall",
    "Specificity",
    "Deviation",
    "Runs",
];

/// One table row. Missing values render as `Unknown`.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub model: String,
    /// Means in [`MetricKind::ALL`] order.
    pub values: [Option<f64>; 5],
    pub deviation: Option<f64>,
    pub runs: Option<usize>,
}

impl TableRow {
    /// Means of every metric, plus the standard deviation of `metric`.
    pub fn from_sample(sample: &RunSample, metric: MetricKind) -> Result<Self, StatError> {
        let stats = summarize(sample, metric)?;
        let mean = |k| {
            let v = sample.values(k);
            v.iter().sum::<f64>() / v.len() as f64
        };
        Ok(Self {
            model: sample.name.clone(),
            values: MetricKind::ALL.map(|k| Some(mean(k))),
            deviation: Some(stats.sd),
            runs: Some(stats.n),
        })
    }

    pub fn value(&self, metric: MetricKind) -> Option<f64> {
        let i = MetricKind::ALL.iter().position(|&k| k == metric).expect("listed");
        self.values[i]
    }

    /// Mean, deviation and run count, when all three are present.
    pub fn summary(&self, metric: MetricKind) -> Option<SummaryStats> {
        Some(SummaryStats {
            mean: self.value(metric)?,
            sd: self.deviation?,
            n: self.runs?,
        })
    }

    fn cells(&self) -> Vec<String> {
        let num = |v: Option<f64>| v.map_or_else(|| UNKNOWN.to_owned(), |x| format!("{x:.3}"));
        let mut out = vec![self.model.clone()];
        out.extend(self.values.iter().map(|&v| num(v)));
        out.push(num(self.deviation));
        out.push(self.runs.map_or_else(|| UNKNOWN.to_owned(), |n| n.to_string()));
        out
    }
}

#[derive(Deserialize)]
struct ReferenceFile {
    rows: Vec<ReferenceRow>,
}

#[derive(Deserialize)]
struct ReferenceRow {
    model: String,
    accuracy: String,
    precision: String,
    f1: String,
    recall: String,
    specificity: String,
    deviation: String,
}

/// Rows from the shipped reference file.
pub fn reference_rows() -> Vec<TableRow> {
    let file: ReferenceFile = serde_json::from_str(REFERENCE_VALUES).expect("reference file is valid");
    let num = |s: &str| s.parse::<f64>().ok();
    file.rows
        .into_iter()
        .map(|r| TableRow {
            values: [
                num(&r.accuracy),
                num(&r.precision),
                num(&r.f1),
                num(&r.recall),
                num(&r.specificity),
            ],
            deviation: num(&r.deviation),
            runs: None,
            model: r.model,
        })
        .collect()
}

pub fn render_markdown_table(rows: &[TableRow]) -> String {
    let mut s = format!("| {} |\n", HEADER.join(" | "));
    s.push_str(&format!("|{}\n", "---|".repeat(HEADER.len())));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.cells().join(" | ")));
    }
    s
}

/// Columns separated by at least two spaces.
pub fn render_text_table(rows: &[TableRow]) -> String {
    let mut grid: Vec<Vec<String>> = vec![HEADER.iter().map(|h| h.to_string()).collect()];
    grid.extend(rows.iter().map(TableRow::cells));
    let widths: Vec<usize> = (0..HEADER.len())
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for row in grid {
        let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

/// Reads rows back from either table form. Lines that do not look like
/// table rows are skipped.
pub fn parse_table(text: &str) -> Result<Vec<TableRow>, StatError> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for line in text.lines() {
        let line = line.trim();
        let cells: Vec<&str> = if line.starts_with('|') {
            line.trim_matches('|').split('|').map(str::trim).collect()
        } else {
            split_wide(line)
        };
        if cells.len() != HEADER.len() {
            continue;
        }
        if cells[0] == HEADER[0] {
            seen_header = true;
            continue;
        }
        if !seen_header || cells.iter().all(|c| c.chars().all(|ch| ch == '-')) {
            continue;
        }
        let num = |c: &str| -> Result<Option<f64>, StatError> {
            if c == UNKNOWN {
                return Ok(None);
            }
            c.parse()
                .map(Some)
                .map_err(|_| StatError::Table(format!("`{c}` is not a number")))
        };
        let runs = if cells[7] == UNKNOWN {
            None
        } else {
            Some(
                cells[7]
                    .parse()
                    .map_err(|_| StatError::Table(format!("`{}` is not a run count", cells[7])))?,
            )
        };
        rows.push(TableRow {
            model: cells[0].to_owned(),
            values: [
                num(cells[1])?,
                num(cells[2])?,
                num(cells[3])?,
                num(cells[4])?,
                num(cells[5])?,
            ],
            deviation: num(cells[6])?,
            runs,
        });
    }
    if !seen_header {
        return Err(StatError::Table("no header row".into()));
    }
    Ok(rows)
}

fn split_wide(line: &str) -> Vec<&str> {
    line.split("  ").map(str::trim).filter(|c| !c.is_empty()).collect()
}

/// A finished two-sample comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: MetricKind,
    pub alpha: f64,
    pub alternative: Alternative,
    pub stats_a: SummaryStats,
    pub stats_b: SummaryStats,
    pub test: TestResult,
}

impl Comparison {
    pub fn new(
        a: &RunSample,
        b: &RunSample,
        metric: MetricKind,
        alpha: f64,
        alternative: Alternative,
    ) -> Result<Self, StatError> {
        let stats_a = summarize(a, metric)?;
        let stats_b = summarize(b, metric)?;
        Ok(Self {
            a: a.name.clone(),
            b: b.name.clone(),
            metric,
            alpha,
            alternative,
            test: super::pooled_t_test(&stats_a, &stats_b)?,
            stats_a,
            stats_b,
        })
    }

    pub fn p(&self) -> f64 {
        self.test.p(self.alternative)
    }

    pub fn reject(&self) -> bool {
        self.p() < self.alpha
    }

    pub fn verdict(&self) -> String {
        let word = if self.reject() { "reject" } else { "fail to reject" };
        format!("{word} equal-performance at α = {}", self.alpha)
    }
}

/// Table followed by the test statistics and the verdict.
pub fn render_comparison(c: &Comparison, rows: &[TableRow], markdown: bool) -> String {
    let mut s = if markdown {
        render_markdown_table(rows)
    } else {
        render_text_table(rows)
    };
    let sided = match c.alternative {
        Alternative::TwoSided => "two-sided",
        Alternative::Greater => "one-sided",
    };
    s.push('\n');
    s.push_str(&format!(
        "pooled t-test on {} ({} vs {}): t = {:.4}, df = {}, p ({sided}) = {:.4e}\n",
        c.metric,
        c.a,
        c.b,
        c.test.t,
        c.test.df,
        c.p()
    ));
    s.push_str(&c.verdict());
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, mean: f64, sd: f64) -> TableRow {
        TableRow {
            model: model.into(),
            values: [Some(mean), Some(0.94), Some(0.93), Some(0.94), Some(0.786)],
            deviation: Some(sd),
            runs: Some(25),
        }
    }

    #[test]
    fn reference_row_keeps_unknowns() {
        let r = &reference_rows()[0];
        assert_eq!(r.value(MetricKind::Accuracy), Some(0.83));
        assert_eq!(r.value(MetricKind::Recall), Some(0.94));
        assert_eq!(r.value(MetricKind::Specificity), None);
        assert_eq!(r.deviation, None);
        let md = render_markdown_table(std::slice::from_ref(r));
        assert!(
            md.contains("| 0.830 | 0.580 | 0.710 | 0.940 | Unknown | Unknown | Unknown |"),
            "{md}"
        );
    }

    #[test]
    fn both_forms_roundtrip() {
        let rows = vec![
            row("our bert", 0.925, 0.006),
            row("climate bert", 0.935, 0.007),
            reference_rows().remove(0),
        ];
        for text in [render_markdown_table(&rows), render_text_table(&rows)] {
            let back = parse_table(&text).unwrap();
            assert_eq!(back, rows, "{text}");
        }
    }

    #[test]
    fn header_column_order() {
        let md = render_markdown_table(&[]);
        assert!(md.starts_with("| Model | Accuracy | Precision | F1 | Recall | Specificity | Deviation | Runs |"));
        assert!(parse_table("no table here").is_err());
    }
}
