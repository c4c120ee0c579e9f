//! Multinomial logistic regression over hashed n-gram features.
//!
//! Objective: mean cross-entropy + (weight_decay / 2) * ||W||^2 (bias is not
//! decayed). Optimized by seeded mini-batch gradient descent; the decay term
//! is applied as a proximal step `W <- (W - lr * grad) / (1 + lr * decay)`,
//! which stays stable for any decay strength.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{featurize, HashingConfig, SparseVec};
use super::{ClassifierError, ProbDist, TrainingConfig};
use crate::schema::{LabelId, RelationSchema};

/// Dense weight matrix (labels x features, row-major) plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    pub n_labels: usize,
    pub n_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Weights stored as `scale * raw` so the decay shrink is O(1) per step.
struct ScaledWeights<'a> {
    raw: &'a [f64],
    scale: f64,
    bias: &'a [f64],
    n_features: usize,
}

impl ScaledWeights<'_> {
    fn scores(&self, x: &SparseVec) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let row = &self.raw[k * self.n_features..(k + 1) * self.n_features];
                let dot: f64 = x.iter().map(|&(f, v)| row[f as usize] * v).sum();
                self.scale * dot + b
            })
            .collect()
    }

    fn objective(&self, xs: &[SparseVec], ys: &[usize], decay: f64) -> f64 {
        let mut ce = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let s = self.scores(x);
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            ce += lse - s[y];
        }
        let mut obj = ce / xs.len() as f64;
        if decay > 0.0 {
            let sq: f64 = self.raw.iter().map(|w| w * w).sum();
            obj += 0.5 * decay * self.scale * self.scale * sq;
        }
        obj
    }
}

impl LinearSoftmax {
    pub fn zeros(n_labels: usize, n_features: usize) -> Self {
        LinearSoftmax {
            n_labels,
            n_features,
            weights: vec![0.0; n_labels * n_features],
            bias: vec![0.0; n_labels],
        }
    }

    fn view(&self) -> ScaledWeights<'_> {
        ScaledWeights {
            raw: &self.weights,
            scale: 1.0,
            bias: &self.bias,
            n_features: self.n_features,
        }
    }

    pub fn scores(&self, x: &SparseVec) -> Vec<f64> {
        self.view().scores(x)
    }

    pub fn predict(&self, x: &SparseVec) -> ProbDist {
        ProbDist::softmax(&self.scores(x))
    }

    /// Mean cross-entropy plus the L2 penalty on the weights.
    pub fn objective(&self, xs: &[SparseVec], ys: &[usize], decay: f64) -> f64 {
        self.view().objective(xs, ys, decay)
    }

    /// Analytic gradient of [`objective`](Self::objective) as (weights, bias).
    pub fn gradient(&self, xs: &[SparseVec], ys: &[usize], decay: f64) -> (Vec<f64>, Vec<f64>) {
        let n = xs.len() as f64;
        let mut gw: Vec<f64> = self.weights.iter().map(|w| decay * w).collect();
        let mut gb = vec![0.0; self.n_labels];
        for (x, &y) in xs.iter().zip(ys) {
            let mut p = self.predict(x).probs().to_vec();
            p[y] -= 1.0;
            for (k, pk) in p.iter().enumerate() {
                gb[k] += pk / n;
                for &(f, v) in x {
                    gw[k * self.n_features + f as usize] += pk * v / n;
                }
            }
        }
        (gw, gb)
    }

    /// Seeded mini-batch training from zero weights. Returns the model and
    /// the objective before training and after each epoch.
    pub fn fit(
        xs: &[SparseVec],
        ys: &[usize],
        n_labels: usize,
        n_features: usize,
        config: &TrainingConfig,
    ) -> Result<(Self, TrainingTrace), ClassifierError> {
        config.validate()?;
        if xs.is_empty() {
            return Err(ClassifierError::EmptyCorpus);
        }
        if xs.len() != ys.len() {
            return Err(ClassifierError::LengthMismatch {
                expected: xs.len(),
                actual: ys.len(),
            });
        }
        if let Some(&bad) = ys.iter().find(|&&y| y >= n_labels) {
            return Err(ClassifierError::InvalidLabel(bad));
        }

        let lr = config.learning_rate;
        let decay = config.weight_decay;
        let shrink = 1.0 / (1.0 + lr * decay);
        let mut raw = vec![0.0; n_labels * n_features];
        let mut bias = vec![0.0; n_labels];
        let mut scale = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..xs.len()).collect();

        let objective = |raw: &[f64], scale: f64, bias: &[f64]| {
            ScaledWeights {
                raw,
                scale,
                bias,
                n_features,
            }
            .objective(xs, ys, decay)
        };
        let mut trace = TrainingTrace {
            objective: vec![objective(&raw, scale, &bias)],
        };

        let mut coefs: Vec<Vec<f64>> = Vec::with_capacity(config.batch_size);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let m = batch.len() as f64;
                coefs.clear();
                let view = ScaledWeights {
                    raw: &raw,
                    scale,
                    bias: &bias,
                    n_features,
                };
                for &i in batch {
                    let mut p = ProbDist::softmax(&view.scores(&xs[i])).probs().to_vec();
                    p[ys[i]] -= 1.0;
                    p.iter_mut().for_each(|c| *c /= m);
                    coefs.push(p);
                }
                let step = lr / scale;
                for (&i, coef) in batch.iter().zip(&coefs) {
                    for (k, c) in coef.iter().enumerate() {
                        bias[k] -= lr * c;
                        let row = &mut raw[k * n_features..(k + 1) * n_features];
                        for &(f, v) in &xs[i] {
                            row[f as usize] -= step * c * v;
                        }
                    }
                }
                scale *= shrink;
                if scale < 1e-30 {
                    raw.iter_mut().for_each(|w| *w *= scale);
                    scale = 1.0;
                }
            }
            trace.objective.push(objective(&raw, scale, &bias));
        }
        if scale != 1.0 {
            raw.iter_mut().for_each(|w| *w *= scale);
        }
        Ok((
            LinearSoftmax {
                n_labels,
                n_features,
                weights: raw,
                bias,
            },
            trace,
        ))
    }
}

/// Training objective recorded before the first epoch and after each one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub linear: LinearSoftmax,
    pub hashing: HashingConfig,
    pub schema_fingerprint: [u8; 32],
}

impl BaselineModel {
    pub fn predict_one(&self, text: &str) -> ProbDist {
        self.linear.predict(&featurize(text, &self.hashing))
    }
}

pub fn train_baseline<T: AsRef<str>>(
    marked: &[T],
    golds: &[LabelId],
    config: &TrainingConfig,
    schema: &RelationSchema,
) -> Result<BaselineModel, ClassifierError> {
    train_baseline_with(marked, golds, config, &HashingConfig::default(), schema).map(|(m, _)| m)
}

pub fn train_baseline_with<T: AsRef<str>>(
    marked: &[T],
    golds: &[LabelId],
    config: &TrainingConfig,
    hashing: &HashingConfig,
    schema: &RelationSchema,
) -> Result<(BaselineModel, TrainingTrace), ClassifierError> {
    if marked.is_empty() {
        return Err(ClassifierError::EmptyCorpus);
    }
    if marked.len() != golds.len() {
        return Err(ClassifierError::LengthMismatch {
            expected: marked.len(),
            actual: golds.len(),
        });
    }
    if !hashing.is_valid() {
        return Err(ClassifierError::InvalidConfig(format!(
            "bad hashing config {hashing:?}"
        )));
    }
    let xs: Vec<SparseVec> = marked.iter().map(|t| featurize(t.as_ref(), hashing)).collect();
    let ys: Vec<usize> = golds.iter().map(|g| g.index()).collect();
    let (linear, trace) = LinearSoftmax::fit(&xs, &ys, schema.len(), hashing.buckets as usize, config)?;
    Ok((
        BaselineModel {
            linear,
            hashing: *hashing,
            schema_fingerprint: schema.fingerprint(),
        },
        trace,
    ))
}

pub fn predict_proba<T: AsRef<str>>(
    model: &BaselineModel,
    marked: &[T],
    schema: &RelationSchema,
) -> Result<Vec<ProbDist>, ClassifierError> {
    if model.schema_fingerprint != schema.fingerprint() || model.linear.n_labels != schema.len() {
        return Err(ClassifierError::SchemaMismatch);
    }
    Ok(marked.iter().map(|t| model.predict_one(t.as_ref())).collect())
}
