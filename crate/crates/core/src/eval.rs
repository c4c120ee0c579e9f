//! Scoring and the marker-strategy ablation harness.

use std::fmt::Write as _;
use std::thread;

use serde::Serialize;
use thiserror::Error;

use crate::classifier::{Backend, ClassifierError};
use crate::corpus::{split_corpus, CorpusError, Instance};
use crate::postprocess::{constrain_batch, DecodeError, Prediction};
use crate::preprocess::{preprocess_corpus, MarkerStrategy};
use crate::schema::{LabelId, RelationSchema};

/// Reference test-set F1 of the transformer setup, per (model, strategy).
/// Kept for comparison in reports; this crate does not reproduce them.
pub const REFERENCE_SCORES: [(&str, MarkerStrategy, f64); 4] = [
    ("roberta-large", MarkerStrategy::PreEntity, 0.726),
    ("bert-base", MarkerStrategy::PreEntity, 0.697),
    ("roberta-large", MarkerStrategy::WrapEntity, 0.716),
    ("roberta-large", MarkerStrategy::PairPrefix, 0.637),
];

/// Reference F1 of the pre-entity transformer run after constrained decoding.
pub const REFERENCE_CONSTRAINED_F1: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("length mismatch: {predictions} predictions for {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("label index {0} outside the schema")]
    InvalidLabel(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Leave `no_relation` out of every average.
    pub exclude_no_relation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore {
    pub label: String,
    pub index: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
    /// False when the class was excluded from the averages.
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassScore>,
    /// Rows are gold labels, columns predicted labels.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
    /// Classes with no gold instances; they count as f1 = 0 in the macro mean.
    pub absent: Vec<LabelId>,
    pub options: ScoreOptions,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn score(preds: &[Prediction], golds: &[LabelId], schema: &RelationSchema) -> Result<EvalReport, EvalError> {
    score_with(preds, golds, schema, ScoreOptions::default())
}

pub fn score_with(
    preds: &[Prediction],
    golds: &[LabelId],
    schema: &RelationSchema,
    options: ScoreOptions,
) -> Result<EvalReport, EvalError> {
    let labels: Vec<LabelId> = preds.iter().map(|p| p.final_label).collect();
    score_labels(&labels, golds, schema, options)
}

/// Score plain label predictions.
pub fn score_labels(
    predicted: &[LabelId],
    golds: &[LabelId],
    schema: &RelationSchema,
    options: ScoreOptions,
) -> Result<EvalReport, EvalError> {
    if predicted.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predicted.len(),
            golds: golds.len(),
        });
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = schema.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (&p, &g) in predicted.iter().zip(golds) {
        for id in [p, g] {
            if id.index() >= n {
                return Err(EvalError::InvalidLabel(id.index()));
            }
        }
        confusion[g.index()][p.index()] += 1;
    }

    let mut per_class = Vec::with_capacity(n);
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let (mut f1_sum, mut weighted_sum, mut support_sum, mut n_included) = (0.0, 0.0, 0, 0);
    let mut absent = Vec::new();
    for (k, label) in schema.labels().iter().enumerate() {
        let tp = confusion[k][k];
        let support: usize = confusion[k].iter().sum();
        let predicted_k: usize = confusion.iter().map(|row| row[k]).sum();
        let precision = ratio(tp, predicted_k);
        let recall = ratio(tp, support);
        let f1 = harmonic(precision, recall);
        let included = !(options.exclude_no_relation && label.id == schema.no_relation());
        if support == 0 {
            absent.push(label.id);
        }
        if included {
            tp_all += tp;
            fp_all += predicted_k - tp;
            fn_all += support - tp;
            f1_sum += f1;
            weighted_sum += f1 * support as f64;
            support_sum += support;
            n_included += 1;
        }
        per_class.push(ClassScore {
            label: label.name.clone(),
            index: k,
            precision,
            recall,
            f1,
            support,
            predicted: predicted_k,
            included,
        });
    }
    let micro_f1 = ratio(2 * tp_all, 2 * tp_all + fp_all + fn_all);
    Ok(EvalReport {
        micro_f1,
        macro_f1: if n_included == 0 {
            0.0
        } else {
            f1_sum / n_included as f64
        },
        weighted_f1: if support_sum == 0 {
            0.0
        } else {
            weighted_sum / support_sum as f64
        },
        per_class,
        confusion,
        total: predicted.len(),
        absent,
        options,
    })
}

/// Change in micro-F1 from `before` to `after`.
pub fn postprocess_gain(before: &EvalReport, after: &EvalReport) -> f64 {
    after.micro_f1 - before.micro_f1
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    record: &'a str,
    total: usize,
    micro_f1: f64,
    macro_f1: f64,
    weighted_f1: f64,
    exclude_no_relation: bool,
    absent: Vec<usize>,
}

#[derive(Serialize)]
struct ClassRecord<'a> {
    record: &'a str,
    #[serde(flatten)]
    score: &'a ClassScore,
    absent: bool,
}

impl EvalReport {
    /// Aligned human-readable table; absent classes are marked with `*`.
    pub fn to_table(&self) -> String {
        let width = self.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(5) + 2;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}{:>10}{:>10}{:>10}{:>9}{:>9}",
            "label", "precision", "recall", "f1", "support", "pred"
        );
        for c in &self.per_class {
            let mark = match (c.support == 0, c.included) {
                (_, false) => " (excluded)",
                (true, true) => " *",
                _ => "",
            };
            let _ = writeln!(
                out,
                "{:<width$}{:>10.4}{:>10.4}{:>10.4}{:>9}{:>9}{mark}",
                c.label, c.precision, c.recall, c.f1, c.support, c.predicted
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "instances    {}", self.total);
        let _ = writeln!(out, "micro f1     {:.4}", self.micro_f1);
        let _ = writeln!(out, "macro f1     {:.4}", self.macro_f1);
        let _ = writeln!(out, "weighted f1  {:.4}", self.weighted_f1);
        if !self.absent.is_empty() {
            let _ = writeln!(
                out,
                "* {} classes have no gold instances (f1 = 0 in the macro mean)",
                self.absent.len()
            );
        }
        out
    }

    /// One JSON record per class followed by a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.per_class {
            let rec = ClassRecord {
                record: "class",
                score: c,
                absent: c.support == 0,
            };
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
        let summary = SummaryRecord {
            record: "summary",
            total: self.total,
            micro_f1: self.micro_f1,
            macro_f1: self.macro_f1,
            weighted_f1: self.weighted_f1,
            exclude_no_relation: self.options.exclude_no_relation,
            absent: self.absent.iter().map(|l| l.index()).collect(),
        };
        out.push_str(&serde_json::to_string(&summary).expect("serializable"));
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub backend: String,
    pub strategy: MarkerStrategy,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub corrections: usize,
    /// Micro-F1 of the unconstrained argmax, for comparison.
    pub raw_micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    /// Sorted by micro-F1, descending; ties keep grid order.
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10}{:<13}{:>10}{:>10}{:>10}{:>10}{:>13}",
            "backend", "strategy", "micro_f1", "macro_f1", "wtd_f1", "raw_micro", "corrections"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10}{:<13}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>13}",
                r.backend, r.strategy, r.micro_f1, r.macro_f1, r.weighted_f1, r.raw_micro_f1, r.corrections
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    /// Train fraction when the harness splits the corpus itself; the rest is
    /// the evaluation set.
    pub train_fraction: f64,
    pub seed: u64,
    pub score: ScoreOptions,
    /// Upper bound on concurrently evaluated cells.
    pub jobs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train_fraction: 0.8,
            seed: 42,
            score: ScoreOptions::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("ablation needs at least one strategy and one backend")]
    EmptyGrid,
    #[error("splitting corpus: {0}")]
    Split(#[from] CorpusError),
    #[error("instance {0:?} has no gold label")]
    MissingGold(String),
    #[error("{backend} x {strategy}: {source}")]
    Cell {
        backend: String,
        strategy: MarkerStrategy,
        #[source]
        source: CellError,
    },
}

/// Split `corpus` by gold label with the configured seed, then evaluate every
/// (backend, strategy) cell on the held-out part.
pub fn run_ablation(
    corpus: &[Instance],
    strategies: &[MarkerStrategy],
    backends: &[&dyn Backend],
    schema: &RelationSchema,
    config: &AblationConfig,
) -> Result<AblationReport, AblationError> {
    if strategies.is_empty() || backends.is_empty() {
        return Err(AblationError::EmptyGrid);
    }
    let fraction = config.train_fraction;
    let (train, eval) = split_corpus(corpus, (fraction, 1.0 - fraction), config.seed)?;
    run_ablation_on(&train, &eval, strategies, backends, schema, config)
}

/// Evaluate every (backend, strategy) cell with an explicit train/eval split.
pub fn run_ablation_on(
    train: &[Instance],
    eval: &[Instance],
    strategies: &[MarkerStrategy],
    backends: &[&dyn Backend],
    schema: &RelationSchema,
    config: &AblationConfig,
) -> Result<AblationReport, AblationError> {
    if strategies.is_empty() || backends.is_empty() {
        return Err(AblationError::EmptyGrid);
    }
    let gold = |set: &[Instance]| {
        set.iter()
            .map(|i| i.gold.ok_or_else(|| AblationError::MissingGold(i.id.clone())))
            .collect::<Result<Vec<_>, _>>()
    };
    let train_golds = gold(train)?;
    let eval_golds = gold(eval)?;

    let cells: Vec<(&dyn Backend, MarkerStrategy)> = backends
        .iter()
        .flat_map(|&b| strategies.iter().map(move |&s| (b, s)))
        .collect();
    let run = |&(backend, strategy): &(&dyn Backend, MarkerStrategy)| {
        run_cell(
            backend,
            strategy,
            train,
            eval,
            &train_golds,
            &eval_golds,
            schema,
            config.score,
        )
        .map_err(|source| AblationError::Cell {
            backend: backend.name().to_string(),
            strategy,
            source,
        })
    };

    let jobs = config.jobs.clamp(1, cells.len());
    let results: Vec<Result<AblationRow, AblationError>> = if jobs == 1 {
        cells.iter().map(run).collect()
    } else {
        let mut slots: Vec<Option<Result<AblationRow, AblationError>>> = (0..cells.len()).map(|_| None).collect();
        thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    let cells = &cells;
                    let run = &run;
                    scope.spawn(move || {
                        (w..cells.len())
                            .step_by(jobs)
                            .map(|i| (i, run(&cells[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("ablation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every cell evaluated")).collect()
    };

    let mut rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| b.micro_f1.total_cmp(&a.micro_f1));
    Ok(AblationReport { rows })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    backend: &dyn Backend,
    strategy: MarkerStrategy,
    train: &[Instance],
    eval: &[Instance],
    train_golds: &[LabelId],
    eval_golds: &[LabelId],
    schema: &RelationSchema,
    options: ScoreOptions,
) -> Result<AblationRow, CellError> {
    let train_marked = preprocess_corpus(train, strategy);
    let eval_marked = preprocess_corpus(eval, strategy);
    let train_texts: Vec<&str> = train_marked.iter().map(|m| m.text.as_str()).collect();
    let eval_texts: Vec<&str> = eval_marked.iter().map(|m| m.text.as_str()).collect();
    let classifier = backend.fit(&train_texts, train_golds, schema)?;
    let dists = classifier.predict_proba(&eval_texts)?;
    let decoded = constrain_batch(&dists, eval, schema)?;
    let after = score_with(&decoded.predictions, eval_golds, schema, options)?;
    let raw: Vec<LabelId> = decoded.predictions.iter().map(|p| p.raw_argmax).collect();
    let before = score_labels(&raw, eval_golds, schema, options)?;
    Ok(AblationRow {
        backend: backend.name().to_string(),
        strategy,
        micro_f1: after.micro_f1,
        macro_f1: after.macro_f1,
        weighted_f1: after.weighted_f1,
        corrections: decoded.corrections,
        raw_micro_f1: before.micro_f1,
    })
}
