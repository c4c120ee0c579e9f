//! Seeded generator for a linearly separable corpus covering every label.
//!
//! Each label has its own cue phrase, and every cue contains at least one
//! token no other label uses, so a linear model over unigram features can
//! separate the classes. Entity names, sentence openers and record order are
//! drawn from the seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EntitySpan, Instance};
use crate::schema::{EntityType, LabelId, RelationSchema};

fn names(t: EntityType) -> &'static [&'static str] {
    match t {
        EntityType::Org => &[
            "Acme Corp",
            "Globex Inc",
            "Initech LLC",
            "Umbrella Holdings",
            "Stark Industries",
            "Wayne Enterprises",
            "Hooli",
            "Vandelay Industries",
            "Soylent Co",
            "Cyberdyne Systems",
        ],
        EntityType::Gpe => &[
            "Texas",
            "Ohio",
            "Delaware",
            "Germany",
            "Singapore",
            "Brazil",
            "Ontario",
            "Japan",
        ],
        EntityType::Person => &[
            "Jane Roe",
            "John Doe",
            "Maria Garcia",
            "Wei Zhang",
            "Amit Patel",
            "Olga Ivanova",
            "Kwame Mensah",
            "Sara Lindqvist",
        ],
        EntityType::Title => &[
            "Chief Executive Officer",
            "Chief Financial Officer",
            "General Counsel",
            "Treasurer",
            "Vice President",
            "Director",
        ],
        EntityType::Date => &[
            "March 3, 2019",
            "2008",
            "January 2015",
            "June 30, 2021",
            "1997",
            "October 1, 2012",
        ],
        EntityType::Money => &[
            "$4.2 million",
            "$310 million",
            "$12.5 billion",
            "$875,000",
            "$1.1 billion",
        ],
        EntityType::Univ => &[
            "Stanford University",
            "University of Michigan",
            "Yale University",
            "Rice University",
            "Duke University",
        ],
        EntityType::GovAgy => &[
            "Securities and Exchange Commission",
            "Federal Reserve",
            "Department of Energy",
            "Internal Revenue Service",
        ],
    }
}

const OPENERS: [&str; 5] = [
    "",
    "In fiscal 2022, ",
    "According to the annual report, ",
    "As disclosed, ",
    "Since then, ",
];

/// Cue phrase placed between the two entities for each default label name.
fn cue(label: &str) -> &'static str {
    match label {
        "org:org:agreement_with" => "entered into a supply agreement with",
        "org:org:subsidiary_of" => "is a wholly owned subsidiary of",
        "org:org:shares_of" => "holds common shares of",
        "org:org:acquired_by" => "was acquired by",
        "org:gpe:operations_in" => "operates facilities in",
        "org:gpe:headquartered_in" => "is headquartered in",
        "org:gpe:formed_in" => "was incorporated under the laws of",
        "pers:title:title" => "serves as",
        "org:date:formed_on" => "was founded on",
        "org:date:acquired_on" => "completed its acquisition on",
        "pers:org:employee_of" => "is employed by",
        "pers:org:member_of" => "sits on the board of",
        "pers:org:founder_of" => "is a cofounder of",
        "org:money:revenue_of" => "reported revenue of",
        "org:money:loss_of" => "recorded a net loss of",
        "org:money:profit_of" => "posted a profit of",
        "org:money:cost_of" => "incurred costs of",
        "pers:univ:employee_of" => "teaches at",
        "pers:univ:attended" => "graduated from",
        "pers:univ:member_of" => "is a trustee of",
        "pers:gov_agy:member_of" => "was appointed to",
        _ => "and were both mentioned alongside",
    }
}

/// `per_class` instances for every label of `schema`; `no_relation`
/// instances cycle through the schema's entity pairs.
pub fn separable_corpus(schema: &RelationSchema, per_class: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(schema.len() * per_class);
    for label in schema.labels() {
        for i in 0..per_class {
            let (t1, t2) = label
                .signature
                .unwrap_or_else(|| schema.pairs()[i % schema.pairs().len()]);
            out.push(make_instance(&mut rng, label.id, &label.name, t1, t2, i));
        }
    }
    out.shuffle(&mut rng);
    out
}

fn make_instance(rng: &mut ChaCha8Rng, id: LabelId, name: &str, t1: EntityType, t2: EntityType, i: usize) -> Instance {
    let opener = OPENERS[rng.gen_range(0..OPENERS.len())];
    let s1 = *names(t1).choose(rng).expect("non-empty");
    let s2 = loop {
        let s = *names(t2).choose(rng).expect("non-empty");
        if s != s1 {
            break s;
        }
    };
    let start1 = opener.chars().count();
    let end1 = start1 + s1.chars().count();
    let middle = format!(" {} ", cue(name));
    let start2 = end1 + middle.chars().count();
    let end2 = start2 + s2.chars().count();
    Instance {
        id: format!("syn-{:02}-{:03}", id.0, i),
        text: format!("{opener}{s1}{middle}{s2}."),
        e1: EntitySpan {
            start: start1,
            end: end1,
            etype: t1,
            surface: s1.to_string(),
        },
        e2: EntitySpan {
            start: start2,
            end: end2,
            etype: t2,
            surface: s2.to_string(),
        },
        gold: Some(id),
    }
}
