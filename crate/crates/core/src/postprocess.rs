//! Plausibility-constrained decoding.
//!
//! Labels are ranked by probability (descending, ties by ascending index) and
//! the first label whose type signature matches the instance's entity pair is
//! chosen. That is the same as an argmax restricted to the pair's plausible
//! set, which is how it is computed here. `no_relation` is plausible for every
//! pair, so decoding always succeeds.

use thiserror::Error;

use crate::classifier::ProbDist;
use crate::corpus::Instance;
use crate::schema::{EntityType, LabelId, RelationSchema, SchemaError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("unknown entity pair ({0}, {1})")]
    UnknownPair(EntityType, EntityType),
    #[error("distribution has {actual} entries, schema has {expected} labels")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("length mismatch: {dists} distributions for {instances} instances")]
    LengthMismatch { dists: usize, instances: usize },
    #[error("item {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<DecodeError>,
    },
}

/// Outcome of decoding one distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub raw_argmax: LabelId,
    pub final_label: LabelId,
    /// Position of `final_label` in the full ranking; 0 when the argmax was
    /// already plausible.
    pub fallback_rank: usize,
    pub final_prob: f64,
}

impl Decision {
    pub fn corrected(&self) -> bool {
        self.fallback_rank > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub source_id: String,
    pub raw_argmax: LabelId,
    pub final_label: LabelId,
    pub fallback_rank: usize,
    pub final_prob: f64,
}

impl Prediction {
    pub fn new(source_id: impl Into<String>, d: Decision) -> Self {
        Prediction {
            source_id: source_id.into(),
            raw_argmax: d.raw_argmax,
            final_label: d.final_label,
            fallback_rank: d.fallback_rank,
            final_prob: d.final_prob,
        }
    }
}

pub fn constrain(
    dist: &ProbDist,
    e1: EntityType,
    e2: EntityType,
    schema: &RelationSchema,
) -> Result<Decision, DecodeError> {
    if dist.len() != schema.len() {
        return Err(DecodeError::DimensionMismatch {
            expected: schema.len(),
            actual: dist.len(),
        });
    }
    let plausible = schema.plausible_labels(e1, e2).map_err(|e| match e {
        SchemaError::UnknownPair(a, b) => DecodeError::UnknownPair(a, b),
        _ => DecodeError::UnknownPair(e1, e2),
    })?;
    let probs = dist.probs();
    // `plausible` is ascending, so a strict comparison keeps the lowest index
    // among equal probabilities.
    let mut best = plausible[0];
    for &id in &plausible[1..] {
        if probs[id.index()] > probs[best.index()] {
            best = id;
        }
    }
    let p = probs[best.index()];
    let fallback_rank = probs
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < best.index()))
        .count();
    Ok(Decision {
        raw_argmax: dist.argmax(),
        final_label: best,
        fallback_rank,
        final_prob: p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedBatch {
    pub predictions: Vec<Prediction>,
    /// Number of predictions with `fallback_rank > 0`.
    pub corrections: usize,
}

pub fn constrain_batch(
    dists: &[ProbDist],
    instances: &[Instance],
    schema: &RelationSchema,
) -> Result<DecodedBatch, DecodeError> {
    if dists.len() != instances.len() {
        return Err(DecodeError::LengthMismatch {
            dists: dists.len(),
            instances: instances.len(),
        });
    }
    let predictions = dists
        .iter()
        .zip(instances)
        .enumerate()
        .map(|(index, (dist, inst))| {
            constrain(dist, inst.e1.etype, inst.e2.etype, schema)
                .map(|d| Prediction::new(inst.id.clone(), d))
                .map_err(|e| DecodeError::AtIndex {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let corrections = predictions.iter().filter(|p| p.fallback_rank > 0).count();
    Ok(DecodedBatch {
        predictions,
        corrections,
    })
}
