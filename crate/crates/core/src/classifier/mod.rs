//! Classifier contract and backends.
//!
//! Every backend returns a full probability distribution over the schema's
//! labels so the decoder can fall back past implausible labels.

mod baseline;
mod features;
mod model_file;
mod remote;

use std::io;
use std::time::Duration;

use thiserror::Error;

use crate::schema::{LabelId, RelationSchema};

pub use baseline::{predict_proba, train_baseline, train_baseline_with, BaselineModel, LinearSoftmax, TrainingTrace};
pub use features::{featurize, HashingConfig, SparseVec, DEFAULT_BUCKETS, DEFAULT_HASH_SEED};
pub use model_file::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use remote::{remote_predict_proba, PredictRequest, PredictResponse, RemoteClient};

/// Sum tolerance for a distribution produced in-process.
pub const SUM_TOLERANCE: f64 = 1e-6;
/// Sum tolerance for a distribution received from outside; accepted ones are
/// renormalized.
pub const EXTERNAL_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("gold label {0} outside the schema")]
    InvalidLabel(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model was trained against a different schema")]
    SchemaMismatch,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("model file version mismatch: {0}")]
    VersionMismatch(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("bad distribution: {0}")]
    BadDistribution(String),
}

/// Probability distribution over label indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Accepts finite non-negative entries summing to one within
    /// [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self, ClassifierError> {
        check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ClassifierError::BadDistribution(format!("sum {sum} is not 1")));
        }
        Ok(ProbDist(probs))
    }

    /// Accepts entries whose sum is within `tolerance` of one and rescales
    /// them to sum to one.
    pub fn renormalized(mut probs: Vec<f64>, tolerance: f64) -> Result<Self, ClassifierError> {
        check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(ClassifierError::BadDistribution(format!(
                "sum {sum} deviates from 1 by more than {tolerance}"
            )));
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        Ok(ProbDist(probs))
    }

    /// Numerically stable softmax.
    pub fn softmax(scores: &[f64]) -> Self {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        ProbDist(exps.into_iter().map(|e| e / sum).collect())
    }

    pub fn uniform(n: usize) -> Self {
        ProbDist(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, label: LabelId) -> f64 {
        self.0[label.index()]
    }

    /// Highest-probability label; ties go to the lower index.
    pub fn argmax(&self) -> LabelId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        LabelId(best as u8)
    }
}

fn check_entries(probs: &[f64]) -> Result<(), ClassifierError> {
    if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
        return Err(ClassifierError::BadDistribution(format!("entry {i} is {p}")));
    }
    Ok(())
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub optimizer: String,
    pub seed: u64,
}

impl TrainingConfig {
    /// Transformer fine-tuning values used by the remote model server:
    /// learning rate 1e-5, 3 epochs, batch size 16, weight decay 0.01, Adam.
    pub fn fine_tune() -> Self {
        TrainingConfig {
            learning_rate: 1e-5,
            epochs: 3,
            batch_size: 16,
            weight_decay: 0.01,
            optimizer: "adam".to_string(),
            seed: 42,
        }
    }

    /// Defaults for the native linear baseline.
    pub fn baseline() -> Self {
        TrainingConfig {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 16,
            weight_decay: 0.0,
            optimizer: "sgd".to_string(),
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |msg: &str| Err(ClassifierError::InvalidConfig(msg.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig::baseline()
    }
}

/// Anything that maps texts to label distributions.
pub trait Classifier: Send + Sync {
    fn name(&self) -> &str;
    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<ProbDist>, ClassifierError>;
}

/// Produces a ready classifier for a training set. The native backend trains
/// on it; a remote backend serves an already fine-tuned model and ignores it.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn fit(
        &self,
        texts: &[&str],
        golds: &[LabelId],
        schema: &RelationSchema,
    ) -> Result<Box<dyn Classifier>, ClassifierError>;
}

/// A trained baseline bound to the schema it was checked against.
pub struct NativeClassifier {
    pub model: BaselineModel,
    pub schema: RelationSchema,
}

impl Classifier for NativeClassifier {
    fn name(&self) -> &str {
        "native"
    }

    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<ProbDist>, ClassifierError> {
        predict_proba(&self.model, texts, &self.schema)
    }
}

#[derive(Debug, Clone)]
pub struct NativeBackend {
    pub config: TrainingConfig,
    pub hashing: HashingConfig,
}

impl NativeBackend {
    pub fn new(config: TrainingConfig) -> Self {
        NativeBackend {
            config,
            hashing: HashingConfig::default(),
        }
    }
}

impl Backend for NativeBackend {
    fn name(&self) -> &str {
        "native"
    }

    fn fit(
        &self,
        texts: &[&str],
        golds: &[LabelId],
        schema: &RelationSchema,
    ) -> Result<Box<dyn Classifier>, ClassifierError> {
        let (model, _) = train_baseline_with(texts, golds, &self.config, &self.hashing, schema)?;
        Ok(Box::new(NativeClassifier {
            model,
            schema: schema.clone(),
        }))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub timeout: Duration,
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn fit(
        &self,
        _texts: &[&str],
        _golds: &[LabelId],
        schema: &RelationSchema,
    ) -> Result<Box<dyn Classifier>, ClassifierError> {
        Ok(Box::new(RemoteClient::new(&self.endpoint, self.timeout, schema)))
    }
}
