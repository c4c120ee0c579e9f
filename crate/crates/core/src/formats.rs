//! Tab-separated stage files exchanged between pipeline steps.
//!
//! | file        | columns                                          |
//! |-------------|--------------------------------------------------|
//! | marked      | `id`, `strategy`, `marked_text`                  |
//! | fine-tune   | `id`, `strategy`, `marked_text`, `gold_label`    |
//! | dists       | `id`, space-separated probabilities              |
//! | predictions | `id`, `raw_label`, `final_label`, `fallback_rank` |

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::classifier::{ProbDist, EXTERNAL_SUM_TOLERANCE};
use crate::postprocess::Prediction;
use crate::preprocess::{MarkedText, MarkerStrategy};
use crate::schema::{LabelId, RelationSchema};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

fn line_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Line {
        line,
        message: message.into(),
    }
}

/// Non-blank lines with 1-based line numbers, split on tabs.
fn records<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, Vec<String>), FormatError>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(e.into())),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l.split('\t').map(String::from).collect()))),
    })
}

fn expect_columns(line: usize, cols: &[String], n: usize) -> Result<(), FormatError> {
    if cols.len() != n {
        return Err(line_err(
            line,
            format!("expected {n} tab-separated columns, found {}", cols.len()),
        ));
    }
    Ok(())
}

pub fn write_marked<W: Write>(mut w: W, marked: &[MarkedText]) -> io::Result<()> {
    for m in marked {
        writeln!(w, "{}\t{}\t{}", m.source_id, m.strategy, m.text)?;
    }
    w.flush()
}

/// A marked-text line read back from disk (provenance is not stored).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedLine {
    pub id: String,
    pub strategy: MarkerStrategy,
    pub text: String,
}

pub fn read_marked<R: BufRead>(reader: R) -> Result<Vec<MarkedLine>, FormatError> {
    records(reader)
        .map(|r| {
            let (line, cols) = r?;
            expect_columns(line, &cols, 3)?;
            let strategy = cols[1].parse().map_err(|e| line_err(line, format!("{e}")))?;
            let mut cols = cols.into_iter();
            let id = cols.next().unwrap_or_default();
            let text = cols.nth(1).unwrap_or_default();
            Ok(MarkedLine { id, strategy, text })
        })
        .collect()
}

impl From<&MarkedText> for MarkedLine {
    fn from(m: &MarkedText) -> Self {
        MarkedLine {
            id: m.source_id.clone(),
            strategy: m.strategy,
            text: m.text.clone(),
        }
    }
}

/// Marked text plus the gold label name, the training input of the remote
/// model server.
pub fn write_finetune<W: Write>(
    mut w: W,
    marked: &[MarkedLine],
    golds: &[LabelId],
    schema: &RelationSchema,
) -> io::Result<()> {
    for (m, g) in marked.iter().zip(golds) {
        writeln!(w, "{}\t{}\t{}\t{}", m.id, m.strategy, m.text, schema.name(*g))?;
    }
    w.flush()
}

pub fn write_dists<W: Write, S: AsRef<str>>(mut w: W, ids: &[S], dists: &[ProbDist]) -> io::Result<()> {
    for (id, d) in ids.iter().zip(dists) {
        let probs: Vec<String> = d.probs().iter().map(f64::to_string).collect();
        writeln!(w, "{}\t{}", id.as_ref(), probs.join(" "))?;
    }
    w.flush()
}

/// Each line must hold exactly `n_labels` probabilities summing to one within
/// the external tolerance; accepted rows are renormalized.
pub fn read_dists<R: BufRead>(reader: R, n_labels: usize) -> Result<Vec<(String, ProbDist)>, FormatError> {
    records(reader)
        .map(|r| {
            let (line, mut cols) = r?;
            expect_columns(line, &cols, 2)?;
            let probs = cols[1]
                .split(' ')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| line_err(line, format!("not a number: {v:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if probs.len() != n_labels {
                return Err(line_err(
                    line,
                    format!("expected {n_labels} probabilities, found {}", probs.len()),
                ));
            }
            let dist =
                ProbDist::renormalized(probs, EXTERNAL_SUM_TOLERANCE).map_err(|e| line_err(line, e.to_string()))?;
            Ok((cols.swap_remove(0), dist))
        })
        .collect()
}

pub fn write_predictions<W: Write>(mut w: W, preds: &[Prediction], schema: &RelationSchema) -> io::Result<()> {
    for p in preds {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            p.source_id,
            schema.name(p.raw_argmax),
            schema.name(p.final_label),
            p.fallback_rank
        )?;
    }
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionLine {
    pub id: String,
    pub raw: LabelId,
    pub final_label: LabelId,
    pub fallback_rank: usize,
}

pub fn read_predictions<R: BufRead>(reader: R, schema: &RelationSchema) -> Result<Vec<PredictionLine>, FormatError> {
    records(reader)
        .map(|r| {
            let (line, cols) = r?;
            expect_columns(line, &cols, 4)?;
            let label = |s: &str| schema.id_of(s).map_err(|e| line_err(line, e.to_string()));
            Ok(PredictionLine {
                raw: label(&cols[1])?,
                final_label: label(&cols[2])?,
                fallback_rank: cols[3]
                    .parse()
                    .map_err(|_| line_err(line, format!("bad fallback rank {:?}", cols[3])))?,
                id: cols[0].clone(),
            })
        })
        .collect()
}
