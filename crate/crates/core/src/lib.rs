//! Relation extraction over typed entity pairs.
//!
//! The pipeline inserts typed entity markers into each sentence, classifies
//! the marked text into one of the schema's relation labels, and then replaces
//! any prediction whose type signature does not fit the entity pair with the
//! most probable label that does.
//!
//! ```
//! use relx::schema::{build_default_schema, EntityType};
//! use relx::classifier::ProbDist;
//! use relx::postprocess::constrain;
//!
//! let schema = build_default_schema();
//! let mut probs = vec![0.0; schema.len()];
//! probs[schema.id_of("org:org:acquired_by").unwrap().index()] = 0.6;
//! probs[schema.id_of("org:date:acquired_on").unwrap().index()] = 0.3;
//! probs[schema.no_relation().index()] = 0.1;
//! let dist = ProbDist::new(probs).unwrap();
//!
//! let d = constrain(&dist, EntityType::Org, EntityType::Date, &schema).unwrap();
//! assert_eq!(schema.name(d.final_label), "org:date:acquired_on");
//! assert_eq!(d.fallback_rank, 1);
//! ```

pub mod classifier;
pub mod corpus;
pub mod eval;
pub mod formats;
pub mod postprocess;
pub mod preprocess;
pub mod schema;
pub mod synthetic;

pub use classifier::{Backend, BaselineModel, Classifier, ProbDist, TrainingConfig};
pub use corpus::{EntitySpan, Instance};
pub use eval::{AblationReport, EvalReport};
pub use postprocess::{constrain, constrain_batch, Prediction};
pub use preprocess::{insert_markers, strip_markers, MarkedText, MarkerStrategy};
pub use schema::{build_default_schema, EntityType, LabelId, RelationSchema};
