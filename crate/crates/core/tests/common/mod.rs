#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use relx::corpus::{char_slice, EntitySpan, Instance};
use relx::schema::{EntityPair, LabelId, RelationSchema};
use relx::ProbDist;

/// Words that collide with marker surface forms, plus non-ASCII text.
const VOCAB: [&str; 16] = [
    "ORG",
    "PERS",
    "GPE",
    "<PERS-ORG>",
    "GOV_AGY",
    "Acme",
    "Texas",
    "revenue",
    "Müller",
    "Zürich",
    "東京",
    "of",
    "the",
    "$5",
    "2019",
    "ñandú",
];

pub fn random_text<R: Rng>(rng: &mut R, min_words: usize) -> String {
    let n = rng.gen_range(min_words..min_words + 10);
    let mut text = String::new();
    for i in 0..n {
        if i > 0 {
            text.push(if rng.gen_bool(0.9) { ' ' } else { ',' });
        }
        text.push_str(VOCAB.choose(rng).unwrap());
    }
    text
}

fn span(text: &str, start: usize, end: usize, etype: relx::EntityType) -> EntitySpan {
    EntitySpan {
        start,
        end,
        etype,
        surface: char_slice(text, start, end).to_string(),
    }
}

/// Random valid instance whose spans are disjoint, nested (including shared
/// boundaries and identical spans) or adjacent, with a random schema pair
/// and plausible gold label.
pub fn random_instance<R: Rng>(rng: &mut R, schema: &RelationSchema, id: usize) -> Instance {
    let text = random_text(rng, 3);
    let len = text.chars().count();
    let (a, b) = loop {
        let s1 = rng.gen_range(0..len - 1);
        let e1 = rng.gen_range(s1 + 1..=len);
        let (s2, e2) = match rng.gen_range(0..5) {
            // nested inside the first span
            0 => {
                let s = rng.gen_range(s1..e1);
                (s, rng.gen_range(s + 1..=e1))
            }
            // adjacent after
            1 if e1 < len => (e1, rng.gen_range(e1 + 1..=len)),
            // adjacent before
            2 if s1 > 0 => (rng.gen_range(0..s1), s1),
            // identical
            3 => (s1, e1),
            _ => {
                let s = rng.gen_range(0..len - 1);
                (s, rng.gen_range(s + 1..=len))
            }
        };
        let partial = (s1 < s2 && s2 < e1 && e1 < e2) || (s2 < s1 && s1 < e2 && e2 < e1);
        if !partial {
            break ((s1, e1), (s2, e2));
        }
    };
    let pair: EntityPair = *schema.pairs().choose(rng).unwrap();
    let (a, b) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
    let gold = *schema.plausible_labels(pair.0, pair.1).unwrap().choose(rng).unwrap();
    Instance {
        id: format!("r{id}"),
        e1: span(&text, a.0, a.1, pair.0),
        e2: span(&text, b.0, b.1, pair.1),
        text,
        gold: Some(gold),
    }
}

/// Random distribution from normalized exponential draws. With
/// `quantize`, entries come from a handful of levels so ties are common.
pub fn random_dist<R: Rng>(rng: &mut R, n: usize, quantize: bool) -> ProbDist {
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            if quantize {
                rng.gen_range(0..4) as f64
            } else {
                -rng.gen::<f64>().max(1e-300).ln()
            }
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        return ProbDist::uniform(n);
    }
    ProbDist::new(raw.iter().map(|v| v / sum).collect()).unwrap()
}

/// Reference decoder: sort all labels by (probability desc, index asc) and
/// return the first plausible one with its rank.
pub fn scan_oracle(dist: &ProbDist, pair: EntityPair, schema: &RelationSchema) -> (LabelId, usize) {
    let mut ranked: Vec<(f64, usize)> = dist.probs().iter().copied().zip(0..).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (rank, &(_, j)) in ranked.iter().enumerate() {
        let id = LabelId(j as u8);
        let sig = schema.labels()[j].signature;
        if sig.is_none() || sig == Some(pair) {
            return (id, rank);
        }
    }
    unreachable!("no_relation is always plausible")
}
