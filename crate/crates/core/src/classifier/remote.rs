//! Client for a remote inference server.
//!
//! `POST <endpoint>/predict` with `{"texts": [...]}`; the server answers
//! `{"probs": [[p0..p21], ...], "labels": [name0..name21]}` where `labels`
//! must equal the schema's label names in index order.

use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{Classifier, ClassifierError, ProbDist, EXTERNAL_SUM_TOLERANCE};
use crate::schema::RelationSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

pub struct RemoteClient {
    url: String,
    agent: Agent,
    labels: Vec<String>,
}

impl RemoteClient {
    pub fn new(endpoint: &str, timeout: Duration, schema: &RelationSchema) -> Self {
        let agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteClient {
            url: format!("{}/predict", endpoint.trim_end_matches('/')),
            agent,
            labels: schema.label_names().into_iter().map(String::from).collect(),
        }
    }

    /// Send one batch and validate the reply against the schema.
    pub fn predict(&self, texts: &[&str]) -> Result<Vec<ProbDist>, ClassifierError> {
        let request = PredictRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
        };
        let response = self
            .agent
            .post(&self.url)
            .send_json(&request)
            .map_err(|e| ClassifierError::Transport(e.to_string()))?;
        let status = response.status();
        let mut body = String::new();
        response
            .into_body()
            .into_reader()
            .read_to_string(&mut body)
            .map_err(|e| ClassifierError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClassifierError::Protocol(format!(
                "server returned {status}: {}",
                body.trim()
            )));
        }
        let parsed: PredictResponse =
            serde_json::from_str(&body).map_err(|e| ClassifierError::Protocol(format!("malformed response: {e}")))?;
        self.validate(parsed, texts.len())
    }

    fn validate(&self, response: PredictResponse, expected: usize) -> Result<Vec<ProbDist>, ClassifierError> {
        if response.labels != self.labels {
            return Err(ClassifierError::Protocol(
                "label list does not match the schema's label order".into(),
            ));
        }
        if response.probs.len() != expected {
            return Err(ClassifierError::LengthMismatch {
                expected,
                actual: response.probs.len(),
            });
        }
        response
            .probs
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != self.labels.len() {
                    return Err(ClassifierError::Protocol(format!(
                        "distribution {i} has {} entries, expected {}",
                        row.len(),
                        self.labels.len()
                    )));
                }
                ProbDist::renormalized(row, EXTERNAL_SUM_TOLERANCE).map_err(|e| match e {
                    ClassifierError::BadDistribution(msg) => {
                        ClassifierError::BadDistribution(format!("distribution {i}: {msg}"))
                    }
                    other => other,
                })
            })
            .collect()
    }
}

impl Classifier for RemoteClient {
    fn name(&self) -> &str {
        "remote"
    }

    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<ProbDist>, ClassifierError> {
        self.predict(texts)
    }
}

pub fn remote_predict_proba<T: AsRef<str>>(
    endpoint: &str,
    marked: &[T],
    timeout: Duration,
    schema: &RelationSchema,
) -> Result<Vec<ProbDist>, ClassifierError> {
    let texts: Vec<&str> = marked.iter().map(AsRef::as_ref).collect();
    RemoteClient::new(endpoint, timeout, schema).predict(&texts)
}
