//! Entity-level precision, recall and F1.
//!
//! A predicted span counts as correct when its start, end and type all
//! equal those of a gold span; each gold span is matched at most once.
//! Counts are micro-averaged over every entity type.
//!
//! Report layout produced by [`format_report`] (one line per row, `\n`
//! terminated):
//!
//! ```text
//! Models      Precision/%  Recall/%    F1/%
//! ----------  -----------  --------  ------
//! Baseline          92.54     88.20   90.32
//! RoBERTa           93.64     94.93   94.17 *
//! ```
//!
//! The model column is left-aligned to the widest of `Models` and every row
//! name (counted in characters); the numeric columns are right-aligned to
//! widths 11, 8 and 6 and separated by two spaces. Values are rounded half
//! up to two decimals. The first row with the highest F1 carries ` *`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_spans, EntitySpan, TaggedSentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub num_gold: usize,
    pub num_pred: usize,
    pub num_correct: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.num_correct, self.num_pred)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.num_correct, self.num_gold)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            num_gold: self.num_gold + o.num_gold,
            num_pred: self.num_pred + o.num_pred,
            num_correct: self.num_correct + o.num_correct,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One model's scores, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub counts: Option<Counts>,
}

impl ReportRow {
    /// A row with externally supplied figures.
    pub fn new(model: impl Into<String>, precision: f64, recall: f64, f1: f64) -> Self {
        Self {
            model: model.into(),
            precision,
            recall,
            f1,
            counts: None,
        }
    }

    pub fn from_counts(model: impl Into<String>, counts: Counts) -> Self {
        Self {
            model: model.into(),
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts: Some(counts),
        }
    }

    pub fn named(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }
}

/// Several rows plus the index of the best F1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub best: Option<usize>,
}

impl EvalReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        let best = best_row(&rows);
        Self { rows, best }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn best_row(rows: &[ReportRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if best.is_none_or(|b| r.f1 > rows[b].f1) {
            best = Some(i);
        }
    }
    best
}

/// Span counts for one sentence.
pub fn count_matches(gold: &[EntitySpan], pred: &[EntitySpan]) -> Counts {
    let mut open: HashSet<&EntitySpan> = gold.iter().collect();
    let num_correct = pred.iter().filter(|s| open.remove(s)).count();
    Counts {
        num_gold: gold.len(),
        num_pred: pred.len(),
        num_correct,
    }
}

/// Score predicted tag sequences against gold sentences.
pub fn evaluate<S: AsRef<str>>(gold: &[TaggedSentence], pred: &[Vec<S>]) -> Result<ReportRow> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment {
            index: gold.len().min(pred.len()),
            msg: format!("{} gold sentences but {} predictions", gold.len(), pred.len()),
        });
    }
    let mut total = Counts::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.tags.len() != p.len() {
            return Err(Error::Alignment {
                index: i,
                msg: format!("gold has {} tags, prediction {}", g.tags.len(), p.len()),
            });
        }
        total = total + count_matches(&extract_spans(&g.tags), &extract_spans(p));
    }
    Ok(ReportRow::from_counts("model", total))
}

/// Round half up to two decimals. The small tolerance absorbs binary
/// representation error in values such as 66.665.
pub fn round2(v: f64) -> f64 {
    ((v * 100.0) + 0.5 + 1e-7).floor() / 100.0
}

/// Render rows as a fixed-width text table (layout in the module docs).
pub fn format_report(rows: &[ReportRow]) -> String {
    let w = rows
        .iter()
        .map(|r| r.model.chars().count())
        .chain([6])
        .max()
        .unwrap_or(6);
    let best = best_row(rows);
    let mut out = String::new();
    let pad = |s: &str| format!("{s}{}", " ".repeat(w - s.chars().count()));
    out.push_str(&format!("{}  {:>11}  {:>8}  {:>6}\n", pad("Models"), "Precision/%", "Recall/%", "F1/%"));
    out.push_str(&format!("{}  {}  {}  {}\n", "-".repeat(w), "-".repeat(11), "-".repeat(8), "-".repeat(6)));
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{}  {:>11.2}  {:>8.2}  {:>6.2}{}\n",
            pad(&r.model),
            round2(r.precision),
            round2(r.recall),
            round2(r.f1),
            if best == Some(i) { " *" } else { "" }
        ));
    }
    out
}
