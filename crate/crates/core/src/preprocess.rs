//! Typed entity-marker insertion.
//!
//! Three strategies:
//! - `PreEntity`: `PERS John Doe is the CEO of ORG Company A.`
//! - `WrapEntity`: `PERS John Doe PERS is the CEO of ORG Company A ORG.`
//! - `PairPrefix`: `<PERS-ORG> John Doe is the CEO of Company A.`
//!
//! Every insertion is recorded in output coordinates so the original text can
//! be recovered without searching for marker words.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{byte_offset, EntitySpan, Instance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MarkerStrategy {
    PreEntity,
    WrapEntity,
    PairPrefix,
}

impl MarkerStrategy {
    pub const ALL: [MarkerStrategy; 3] = [
        MarkerStrategy::PreEntity,
        MarkerStrategy::WrapEntity,
        MarkerStrategy::PairPrefix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MarkerStrategy::PreEntity => "pre_entity",
            MarkerStrategy::WrapEntity => "wrap_entity",
            MarkerStrategy::PairPrefix => "pair_prefix",
        }
    }
}

impl fmt::Display for MarkerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl serde::Serialize for MarkerStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for MarkerStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown marker strategy {0:?} (expected pre_entity, wrap_entity or pair_prefix)")]
pub struct UnknownStrategy(pub String);

impl FromStr for MarkerStrategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MarkerStrategy::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

/// A marker string placed at `position` (character offset in the marked text).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insertion {
    pub position: usize,
    pub marker: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedText {
    pub text: String,
    pub strategy: MarkerStrategy,
    pub source_id: String,
    /// Ascending by position, non-overlapping.
    pub inserted: Vec<Insertion>,
}

impl AsRef<str> for MarkedText {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("corrupt provenance: insertion {marker:?} not found at position {position}")]
pub struct CorruptProvenance {
    pub position: usize,
    pub marker: String,
}

/// Pending insertion in source coordinates. Events at the same source
/// position are emitted in ascending `rank`.
struct Event {
    at: usize,
    rank: (u8, isize, u8),
    marker: String,
}

/// Opening/closing events for one span. Closers precede openers at the same
/// offset; longer spans open first and close last. `role` breaks ties between
/// identical spans (e1 outside e2).
fn span_events(span: &EntitySpan, role: u8, wrap: bool, out: &mut Vec<Event>) {
    let marker = span.etype.marker();
    let len = span.len() as isize;
    out.push(Event {
        at: span.start,
        rank: (1, -len, role),
        marker: format!("{marker} "),
    });
    if wrap {
        out.push(Event {
            at: span.end,
            rank: (0, len, 1 - role),
            marker: format!(" {marker}"),
        });
    }
}

pub fn insert_markers(inst: &Instance, strategy: MarkerStrategy) -> MarkedText {
    let mut events = Vec::with_capacity(4);
    match strategy {
        MarkerStrategy::PreEntity | MarkerStrategy::WrapEntity => {
            let wrap = strategy == MarkerStrategy::WrapEntity;
            span_events(&inst.e1, 0, wrap, &mut events);
            span_events(&inst.e2, 1, wrap, &mut events);
        }
        MarkerStrategy::PairPrefix => events.push(Event {
            at: 0,
            rank: (0, 0, 0),
            marker: format!("<{}-{}> ", inst.e1.etype.marker(), inst.e2.etype.marker()),
        }),
    }
    events.sort_by_key(|e| (e.at, e.rank));

    let extra: usize = events.iter().map(|e| e.marker.len()).sum();
    let mut text = String::with_capacity(inst.text.len() + extra);
    let mut inserted = Vec::with_capacity(events.len());
    let mut out_chars = 0;
    let mut pending = events.into_iter().peekable();
    let mut emit = |at: usize, text: &mut String, out_chars: &mut usize| {
        while let Some(ev) = pending.next_if(|e| e.at == at) {
            inserted.push(Insertion {
                position: *out_chars,
                marker: ev.marker.clone(),
            });
            *out_chars += ev.marker.chars().count();
            text.push_str(&ev.marker);
        }
    };
    let mut n_chars = 0;
    for (i, c) in inst.text.chars().enumerate() {
        emit(i, &mut text, &mut out_chars);
        text.push(c);
        out_chars += 1;
        n_chars = i + 1;
    }
    emit(n_chars, &mut text, &mut out_chars);

    MarkedText {
        text,
        strategy,
        source_id: inst.id.clone(),
        inserted,
    }
}

/// Remove the recorded insertions right to left, checking each one.
pub fn strip_markers(marked: &MarkedText) -> Result<String, CorruptProvenance> {
    let mut text = marked.text.clone();
    for ins in marked.inserted.iter().rev() {
        let from = byte_offset(&text, ins.position);
        if !text[from..].starts_with(&ins.marker) {
            return Err(CorruptProvenance {
                position: ins.position,
                marker: ins.marker.clone(),
            });
        }
        text.replace_range(from..from + ins.marker.len(), "");
    }
    Ok(text)
}

pub fn preprocess_corpus(corpus: &[Instance], strategy: MarkerStrategy) -> Vec<MarkedText> {
    corpus.iter().map(|inst| insert_markers(inst, strategy)).collect()
}
