//! Instance records: the canonical line-delimited format, validation,
//! statistics and seeded stratified splitting.
//!
//! Offsets are character offsets (Unicode scalar values), start inclusive and
//! end exclusive.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{EntityPair, EntityType, LabelId, RelationSchema};

/// Placeholder written in the `gold` field of an unlabeled record.
pub const NO_GOLD: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: EntityType,
    pub surface: String,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn partially_overlaps(&self, other: &EntitySpan) -> bool {
        (self.start < other.start && other.start < self.end && self.end < other.end)
            || (other.start < self.start && self.start < other.end && other.end < self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub e1: EntitySpan,
    pub e2: EntitySpan,
    pub gold: Option<LabelId>,
}

impl Instance {
    pub fn pair(&self) -> EntityPair {
        (self.e1.etype, self.e2.etype)
    }
}

/// Which entity a span-level violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    E1,
    E2,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::E1 => "e1",
            Role::E2 => "e2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("text contains tab or line break")]
    ForbiddenWhitespace,
    #[error("empty span ({0})")]
    EmptySpan(Role),
    #[error("span out of bounds ({0})")]
    SpanOutOfBounds(Role),
    #[error("span/surface mismatch ({0})")]
    SurfaceMismatch(Role),
    #[error("partial span overlap")]
    PartialOverlap,
    #[error("unknown entity pair ({0}, {1})")]
    UnknownPair(EntityType, EntityType),
    #[error("gold label implausible for pair ({0}, {1})")]
    ImplausibleGold(EntityType, EntityType),
    #[error("gold label index {0} out of range")]
    GoldOutOfRange(usize),
}

/// Check every instance-level invariant; the error names the first violation.
pub fn validate_instance(inst: &Instance, schema: &RelationSchema) -> Result<(), ValidationError> {
    if inst.text.contains(['\t', '\n', '\r']) {
        return Err(ValidationError::ForbiddenWhitespace);
    }
    let len = inst.text.chars().count();
    for (role, span) in [(Role::E1, &inst.e1), (Role::E2, &inst.e2)] {
        if span.start >= span.end {
            return Err(ValidationError::EmptySpan(role));
        }
        if span.end > len {
            return Err(ValidationError::SpanOutOfBounds(role));
        }
        if char_slice(&inst.text, span.start, span.end) != span.surface {
            return Err(ValidationError::SurfaceMismatch(role));
        }
    }
    if inst.e1.partially_overlaps(&inst.e2) {
        return Err(ValidationError::PartialOverlap);
    }
    let (a, b) = inst.pair();
    if !schema.contains_pair(a, b) {
        return Err(ValidationError::UnknownPair(a, b));
    }
    if let Some(gold) = inst.gold {
        match schema.is_plausible(gold, a, b) {
            Ok(true) => {}
            Ok(false) => return Err(ValidationError::ImplausibleGold(a, b)),
            Err(_) => return Err(ValidationError::GoldOutOfRange(gold.index())),
        }
    }
    Ok(())
}

/// Substring by character offsets. Offsets past the end are clamped.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let from = byte_offset(text, start);
    let to = byte_offset(text, end);
    &text[from..to.max(from)]
}

/// Byte offset of the `chars`-th character, or the text length.
pub(crate) fn byte_offset(text: &str, chars: usize) -> usize {
    text.char_indices().nth(chars).map_or(text.len(), |(b, _)| b)
}

/// One line of the canonical corpus format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    pub e1_start: usize,
    pub e1_end: usize,
    pub e2_start: usize,
    pub e2_end: usize,
    pub e1_type: String,
    pub e2_type: String,
    pub gold: String,
}

impl CorpusRecord {
    pub fn from_instance(inst: &Instance, schema: &RelationSchema) -> Self {
        CorpusRecord {
            id: inst.id.clone(),
            text: inst.text.clone(),
            e1_start: inst.e1.start,
            e1_end: inst.e1.end,
            e2_start: inst.e2.start,
            e2_end: inst.e2.end,
            e1_type: inst.e1.etype.token().to_string(),
            e2_type: inst.e2.etype.token().to_string(),
            gold: inst
                .gold
                .map_or_else(|| NO_GOLD.to_string(), |g| schema.name(g).to_string()),
        }
    }

    /// Resolve type tokens and the gold name; spans take their surface from
    /// the text so that out-of-range offsets surface as validation errors.
    pub fn into_instance(self, schema: &RelationSchema) -> Result<Instance, String> {
        let e1_type: EntityType = self.e1_type.parse().map_err(|e| format!("e1_type: {e}"))?;
        let e2_type: EntityType = self.e2_type.parse().map_err(|e| format!("e2_type: {e}"))?;
        let gold = if self.gold == NO_GOLD {
            None
        } else {
            Some(schema.id_of(&self.gold).map_err(|e| format!("gold: {e}"))?)
        };
        let span = |start: usize, end: usize, etype| EntitySpan {
            start,
            end,
            etype,
            surface: char_slice(&self.text, start, end).to_string(),
        };
        Ok(Instance {
            e1: span(self.e1_start, self.e1_end, e1_type),
            e2: span(self.e2_start, self.e2_end, e2_type),
            id: self.id,
            text: self.text,
            gold,
        })
    }
}

/// Converts one source line into a canonical record. Implement this to
/// ingest external exports whose field names or offset units differ.
pub trait RecordAdapter {
    fn adapt(&self, line: &str) -> Result<CorpusRecord, String>;
}

/// The canonical JSON-lines format.
#[derive(Debug, Clone, Copy, Default)]
pub struct CanonicalAdapter;

impl RecordAdapter for CanonicalAdapter {
    fn adapt(&self, line: &str) -> Result<CorpusRecord, String> {
        serde_json::from_str(line).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {error}")]
    Invalid { line: usize, error: ValidationError },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
}

impl RecordError {
    pub fn line(&self) -> usize {
        match self {
            RecordError::Parse { line, .. }
            | RecordError::Invalid { line, .. }
            | RecordError::DuplicateId { line, .. } => *line,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("instance {0:?} has no gold label")]
    MissingGold(String),
    #[error("invalid split fractions ({0}, {1})")]
    BadFractions(f64, f64),
}

/// Accepted instances in file order plus every rejected line.
#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub instances: Vec<Instance>,
    pub rejected: Vec<RecordError>,
}

pub fn load_corpus(path: &Path, schema: &RelationSchema) -> Result<LoadedCorpus, CorpusError> {
    load_corpus_with(path, schema, &CanonicalAdapter)
}

pub fn load_corpus_with(
    path: &Path,
    schema: &RelationSchema,
    adapter: &dyn RecordAdapter,
) -> Result<LoadedCorpus, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    read_corpus(reader, schema, adapter)
}

/// Parse records from any line source. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(
    reader: R,
    schema: &RelationSchema,
    adapter: &dyn RecordAdapter,
) -> Result<LoadedCorpus, CorpusError> {
    let mut loaded = LoadedCorpus::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = match adapter.adapt(&line).and_then(|r| r.into_instance(schema)) {
            Ok(inst) => inst,
            Err(message) => {
                loaded.rejected.push(RecordError::Parse { line: line_no, message });
                continue;
            }
        };
        if let Err(error) = validate_instance(&inst, schema) {
            loaded.rejected.push(RecordError::Invalid { line: line_no, error });
            continue;
        }
        if !seen.insert(inst.id.clone()) {
            loaded.rejected.push(RecordError::DuplicateId {
                line: line_no,
                id: inst.id,
            });
            continue;
        }
        loaded.instances.push(inst);
    }
    Ok(loaded)
}

pub fn write_corpus<W: Write>(mut writer: W, corpus: &[Instance], schema: &RelationSchema) -> io::Result<()> {
    for inst in corpus {
        let record = CorpusRecord::from_instance(inst, schema);
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_corpus(path: &Path, corpus: &[Instance], schema: &RelationSchema) -> io::Result<()> {
    write_corpus(BufWriter::new(File::create(path)?), corpus, schema)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    /// Indexed by label id.
    pub per_relation: Vec<usize>,
    /// In schema pair order.
    pub per_pair: Vec<(EntityPair, usize)>,
    pub total: usize,
}

pub fn compute_stats(corpus: &[Instance], schema: &RelationSchema) -> Result<CorpusStats, CorpusError> {
    let mut per_relation = vec![0; schema.len()];
    let mut per_pair: BTreeMap<EntityPair, usize> = BTreeMap::new();
    for inst in corpus {
        let gold = inst.gold.ok_or_else(|| CorpusError::MissingGold(inst.id.clone()))?;
        per_relation[gold.index()] += 1;
        *per_pair.entry(inst.pair()).or_default() += 1;
    }
    Ok(CorpusStats {
        per_relation,
        per_pair: schema
            .pairs()
            .iter()
            .map(|p| (*p, per_pair.get(p).copied().unwrap_or(0)))
            .collect(),
        total: corpus.len(),
    })
}

/// Seeded split into (train, dev), stratified by gold label.
///
/// The global sizes are `round(train * n)` and `round(dev * n)` (or the
/// remainder when the fractions sum to one); they are distributed across
/// classes by largest remainder. Each output keeps corpus order.
pub fn split_corpus(
    corpus: &[Instance],
    fractions: (f64, f64),
    seed: u64,
) -> Result<(Vec<Instance>, Vec<Instance>), CorpusError> {
    let (f_train, f_dev) = fractions;
    if !(f_train > 0.0 && f_dev > 0.0 && f_train + f_dev <= 1.0 + 1e-9) {
        return Err(CorpusError::BadFractions(f_train, f_dev));
    }
    let mut by_class: BTreeMap<LabelId, Vec<usize>> = BTreeMap::new();
    for (i, inst) in corpus.iter().enumerate() {
        let gold = inst.gold.ok_or_else(|| CorpusError::MissingGold(inst.id.clone()))?;
        by_class.entry(gold).or_default().push(i);
    }
    let n = corpus.len();
    let n_train = ((f_train * n as f64).round() as usize).min(n);
    let n_dev = if (f_train + f_dev - 1.0).abs() < 1e-9 {
        n - n_train
    } else {
        ((f_dev * n as f64).round() as usize).min(n - n_train)
    };

    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let train_alloc = apportion(n_train, &sizes, &sizes);
    let remaining: Vec<usize> = sizes.iter().zip(&train_alloc).map(|(s, t)| s - t).collect();
    let dev_alloc = apportion(n_dev, &sizes, &remaining);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::with_capacity(n_train);
    let mut dev_idx = Vec::with_capacity(n_dev);
    for (k, members) in by_class.values().enumerate() {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        train_idx.extend_from_slice(&members[..train_alloc[k]]);
        dev_idx.extend_from_slice(&members[train_alloc[k]..train_alloc[k] + dev_alloc[k]]);
    }
    train_idx.sort_unstable();
    dev_idx.sort_unstable();
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| corpus[i].clone()).collect();
    Ok((pick(train_idx), pick(dev_idx)))
}

/// Distribute `target` items over classes proportionally to `weights`, never
/// exceeding `capacity`. Ties in the remainder go to the lower class index.
fn apportion(target: usize, weights: &[usize], capacity: &[usize]) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut alloc: Vec<usize> = weights
        .iter()
        .zip(capacity)
        .map(|(&w, &c)| ((target * w) / total).min(c))
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Largest fractional part first, compared exactly as (target * w) mod total.
    order.sort_by_key(|&k| (std::cmp::Reverse((target * weights[k]) % total), k));
    let mut left = target.saturating_sub(alloc.iter().sum());
    while left > 0 {
        let before = left;
        for &k in &order {
            if left == 0 {
                break;
            }
            if alloc[k] < capacity[k] {
                alloc[k] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    alloc
}
