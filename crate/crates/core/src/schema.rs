//! Relation ontology: entity types, the 22 outcome labels and their
//! ordered type signatures.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Name of the label that is plausible for every entity pair.
pub const NO_RELATION: &str = "no_relation";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("unknown entity type token {0:?}")]
    UnknownToken(String),
    #[error("malformed label name {0:?}")]
    Malformed(String),
    #[error("unknown entity pair ({0}, {1})")]
    UnknownPair(EntityType, EntityType),
    #[error("label index {0} out of range")]
    LabelOutOfRange(usize),
    #[error("unknown label name {0:?}")]
    UnknownLabel(String),
    #[error("duplicate label name {0:?}")]
    DuplicateLabel(String),
    #[error("schema must contain exactly one {NO_RELATION:?} label")]
    MissingNoRelation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityType {
    Org,
    Gpe,
    Person,
    Title,
    Date,
    Money,
    Univ,
    GovAgy,
}

impl EntityType {
    pub const ALL: [EntityType; 8] = [
        EntityType::Org,
        EntityType::Gpe,
        EntityType::Person,
        EntityType::Title,
        EntityType::Date,
        EntityType::Money,
        EntityType::Univ,
        EntityType::GovAgy,
    ];

    /// Lowercase token used in label names and corpus records.
    pub fn token(self) -> &'static str {
        match self {
            EntityType::Org => "org",
            EntityType::Gpe => "gpe",
            EntityType::Person => "pers",
            EntityType::Title => "title",
            EntityType::Date => "date",
            EntityType::Money => "money",
            EntityType::Univ => "univ",
            EntityType::GovAgy => "gov_agy",
        }
    }

    /// Surface form inserted into text as an entity marker.
    pub fn marker(self) -> &'static str {
        match self {
            EntityType::Org => "ORG",
            EntityType::Gpe => "GPE",
            EntityType::Person => "PERS",
            EntityType::Title => "TITLE",
            EntityType::Date => "DATE",
            EntityType::Money => "MONEY",
            EntityType::Univ => "UNIV",
            EntityType::GovAgy => "GOV_AGY",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.marker())
    }
}

impl FromStr for EntityType {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.token() == s)
            .ok_or_else(|| SchemaError::UnknownToken(s.to_string()))
    }
}

/// Ordered (e1, e2) type pair.
pub type EntityPair = (EntityType, EntityType);

/// Index of a label within a [`RelationSchema`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelId(pub u8);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationLabel {
    pub id: LabelId,
    pub name: String,
    /// `None` exactly for `no_relation`.
    pub signature: Option<EntityPair>,
}

/// Derive the ordered type pair encoded in a label name's `tok1:tok2:` prefix.
pub fn parse_label_signature(name: &str) -> Result<Option<EntityPair>, SchemaError> {
    if name == NO_RELATION {
        return Ok(None);
    }
    let mut parts = name.splitn(3, ':');
    let (Some(first), Some(second), Some(rel)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(SchemaError::Malformed(name.to_string()));
    };
    if rel.is_empty() {
        return Err(SchemaError::Malformed(name.to_string()));
    }
    Ok(Some((first.parse()?, second.parse()?)))
}

/// Table-1 relation names in canonical order; `no_relation` is appended last.
const DEFAULT_LABELS: [&str; 21] = [
    "org:org:agreement_with",
    "org:org:subsidiary_of",
    "org:org:shares_of",
    "org:org:acquired_by",
    "org:gpe:operations_in",
    "org:gpe:headquartered_in",
    "org:gpe:formed_in",
    "pers:title:title",
    "org:date:formed_on",
    "org:date:acquired_on",
    "pers:org:employee_of",
    "pers:org:member_of",
    "pers:org:founder_of",
    "org:money:revenue_of",
    "org:money:loss_of",
    "org:money:profit_of",
    "org:money:cost_of",
    "pers:univ:employee_of",
    "pers:univ:attended",
    "pers:univ:member_of",
    "pers:gov_agy:member_of",
];

/// Immutable label ontology plus the pair → plausible-label index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSchema {
    labels: Vec<RelationLabel>,
    pairs: Vec<EntityPair>,
    pair_index: BTreeMap<EntityPair, Vec<LabelId>>,
    no_relation: LabelId,
}

impl RelationSchema {
    /// Build a schema from label names in index order. Entity pairs are the
    /// distinct signatures, in order of first appearance.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self, SchemaError> {
        if names.len() > u8::MAX as usize + 1 {
            return Err(SchemaError::LabelOutOfRange(names.len()));
        }
        let mut labels = Vec::with_capacity(names.len());
        let mut pairs = Vec::new();
        let mut no_relation = None;
        for (i, name) in names.iter().enumerate() {
            let name = name.as_ref();
            if labels.iter().any(|l: &RelationLabel| l.name == name) {
                return Err(SchemaError::DuplicateLabel(name.to_string()));
            }
            let signature = parse_label_signature(name)?;
            let id = LabelId(i as u8);
            match signature {
                None => no_relation = Some(id),
                Some(pair) if !pairs.contains(&pair) => pairs.push(pair),
                Some(_) => {}
            }
            labels.push(RelationLabel {
                id,
                name: name.to_string(),
                signature,
            });
        }
        let no_relation = no_relation.ok_or(SchemaError::MissingNoRelation)?;

        let mut pair_index = BTreeMap::new();
        for &pair in &pairs {
            let ids: Vec<LabelId> = labels
                .iter()
                .filter(|l| l.signature.is_none() || l.signature == Some(pair))
                .map(|l| l.id)
                .collect();
            pair_index.insert(pair, ids);
        }
        Ok(RelationSchema {
            labels,
            pairs,
            pair_index,
            no_relation,
        })
    }

    pub fn labels(&self) -> &[RelationLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn no_relation(&self) -> LabelId {
        self.no_relation
    }

    /// Entity pairs in canonical order.
    pub fn pairs(&self) -> &[EntityPair] {
        &self.pairs
    }

    pub fn label(&self, id: LabelId) -> Result<&RelationLabel, SchemaError> {
        self.labels
            .get(id.index())
            .ok_or(SchemaError::LabelOutOfRange(id.index()))
    }

    pub fn name(&self, id: LabelId) -> &str {
        &self.labels[id.index()].name
    }

    pub fn id_of(&self, name: &str) -> Result<LabelId, SchemaError> {
        self.labels
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.id)
            .ok_or_else(|| SchemaError::UnknownLabel(name.to_string()))
    }

    pub fn label_names(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn contains_pair(&self, e1: EntityType, e2: EntityType) -> bool {
        self.pair_index.contains_key(&(e1, e2))
    }

    /// Labels plausible for `(e1, e2)`, ascending by index. Always includes
    /// `no_relation`.
    pub fn plausible_labels(&self, e1: EntityType, e2: EntityType) -> Result<&[LabelId], SchemaError> {
        self.pair_index
            .get(&(e1, e2))
            .map(Vec::as_slice)
            .ok_or(SchemaError::UnknownPair(e1, e2))
    }

    pub fn is_plausible(&self, label: LabelId, e1: EntityType, e2: EntityType) -> Result<bool, SchemaError> {
        let sig = self.label(label)?.signature;
        if !self.contains_pair(e1, e2) {
            return Err(SchemaError::UnknownPair(e1, e2));
        }
        Ok(match sig {
            None => true,
            Some(pair) => pair == (e1, e2),
        })
    }

    /// SHA-256 over the label names in index order. Models record it to
    /// detect a schema change between training and prediction.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for label in &self.labels {
            hasher.update(label.id.0.to_le_bytes());
            hasher.update(label.name.as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().into()
    }

    /// Line-delimited `index<TAB>name<TAB>tok1<TAB>tok2` table; `-` stands in
    /// for the missing tokens of `no_relation`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for label in &self.labels {
            let (t1, t2) = match label.signature {
                Some((a, b)) => (a.token(), b.token()),
                None => ("-", "-"),
            };
            out.push_str(&format!("{}\t{}\t{}\t{}\n", label.id, label.name, t1, t2));
        }
        out
    }
}

impl Default for RelationSchema {
    fn default() -> Self {
        build_default_schema()
    }
}

/// The 21 named relations in table order plus `no_relation` at index 21.
pub fn build_default_schema() -> RelationSchema {
    let mut names: Vec<&str> = DEFAULT_LABELS.to_vec();
    names.push(NO_RELATION);
    RelationSchema::new(&names).expect("default label table is well-formed")
}
